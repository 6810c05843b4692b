"""Run configuration for the command-line harness.

A run is fully described by one :class:`RunConfig`; its canonical JSON
form is hashed into every CSV header so outputs can be traced back to the
settings that produced them.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import pydantic
import yaml
from pydantic import BaseModel, ConfigDict, Field

from .errors import FormatError, ValidationError
from .lora import RecoveryConfig
from .masks import DecoderArchitecture
from .pruning import CalibrationConfig
from .training import TrainConfig


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArchBlock(_Block):
    layers: int = Field(2, ge=1)
    heads_per_layer: int = Field(4, ge=1)
    d_model: int = Field(32, ge=1)
    d_ffn: int = Field(64, ge=1)

    def build(self) -> DecoderArchitecture:
        return DecoderArchitecture(self.layers, self.heads_per_layer, self.d_model, self.d_ffn)


class TrainBlock(_Block):
    epochs: int = Field(20, ge=1)
    steps_per_epoch: int = Field(100, ge=1)
    batch_size: int = Field(128, ge=1)
    lr_start: float = Field(1e-3, gt=0)
    lr_end: float = Field(1e-6, gt=0)
    snr_low_db: float = 2.0
    snr_high_db: float = 7.0


class PruneBlock(_Block):
    target_ratio: float = Field(0.4, ge=0, lt=1)
    calib_frames: int = Field(1024, ge=1)
    calib_batch: int = Field(256, ge=1)


class RecoverBlock(_Block):
    gamma: float = Field(1.0, ge=0)
    epochs: int = Field(10, ge=1)
    steps_per_epoch: int = Field(50, ge=1)
    batch_size: int = Field(128, ge=1)
    rank: int = Field(8, ge=1)
    alpha: float = 16.0
    lr_start: float = Field(3e-3, gt=0)
    lr_end: float = Field(1e-5, gt=0)


class EvalBlock(_Block):
    snr_db: list[float] = Field(default_factory=lambda: [2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    min_frames: int = Field(10000, ge=1)
    min_errors: int = Field(100, ge=0)
    bp_iters: int = Field(50, ge=1)


class LibraryBlock(_Block):
    K: int = Field(20, ge=1)
    tau: float = Field(0.5, gt=0, le=1)
    beta: float = Field(0.1, gt=0)


class RunConfig(_Block):
    codes: list[str] = Field(default_factory=list)
    seed: int = Field(0, ge=0)
    arch: ArchBlock = ArchBlock()
    train: TrainBlock = TrainBlock()
    prune: PruneBlock = PruneBlock()
    recover: RecoverBlock = RecoverBlock()
    eval: EvalBlock = EvalBlock()
    library: LibraryBlock = LibraryBlock()
    pairs: list[tuple[str, str]] = Field(default_factory=list)

    # --------------------------------------------------------- conversions

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train.model_dump(), seed=self.seed)

    def calibration(self) -> CalibrationConfig:
        return CalibrationConfig(
            frames=self.prune.calib_frames,
            snr_low_db=self.train.snr_low_db,
            snr_high_db=self.train.snr_high_db,
            seed=self.seed,
            batch_size=self.prune.calib_batch,
        )

    def recovery_config(self) -> RecoveryConfig:
        return RecoveryConfig(
            **self.recover.model_dump(),
            snr_low_db=self.train.snr_low_db,
            snr_high_db=self.train.snr_high_db,
            seed=self.seed,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def _format_errors(exc: pydantic.ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def config_from_dict(data: Any) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping at the top level")
    try:
        return RunConfig.model_validate(data)
    except pydantic.ValidationError as exc:
        raise ValidationError(f"invalid config: {_format_errors(exc)}") from None


def load_config(path) -> RunConfig:
    """Read a JSON or YAML config file (YAML is a superset, so one parser serves both)."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise FormatError(f"config file {path} does not exist") from None
    except yaml.YAMLError as exc:
        raise FormatError(f"config file {path} is not valid JSON/YAML: {exc}") from None
    return config_from_dict(data if data is not None else {})


def with_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Apply dotted-path overrides such as ``{"train.epochs": 3}``; ``None`` values are skipped."""
    data = cfg.model_dump()
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return config_from_dict(data)

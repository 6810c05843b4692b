"""Low-rank adapters on the attention projections, distillation loss, recovery and merging."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .channel import substream
from .decoder import DTYPE, PROJECTIONS, DecoderModel, _decode_tensor, _encode_tensor, bce_loss, code_context
from .errors import FormatError, LoraStateError, ValidationError
from .gf2 import LinearCode
from .training import adam_loop, epoch_means, sample_batch

ADAPTER_FORMAT_VERSION = 1
KD_EPS = 1e-7


def _target_shape(model: DecoderModel, layer: int, kind: str) -> tuple[int, int]:
    """``(d_out, d_in)`` of projection ``kind`` in ``layer``."""
    return tuple(getattr(model.blocks[layer], f"w_{kind}").shape)


def lora_forward(w: torch.Tensor, a: torch.Tensor, b: torch.Tensor, alpha: float) -> torch.Tensor:
    """``W + (alpha / r) B A`` where ``r`` is the inner dimension of ``A``."""
    r = a.shape[0]
    if b.shape[1] != r or (b.shape[0], a.shape[1]) != tuple(w.shape):
        raise ValidationError(
            f"adapter shapes A{tuple(a.shape)} B{tuple(b.shape)} do not fit weight {tuple(w.shape)}"
        )
    return w + (alpha / r) * (b @ a)


class LoraAdapterSet:
    """Per-(layer, projection) factor pairs ``A`` (r x d_in) and ``B`` (d_out x r).

    The requested rank is clamped per target to ``min(d_in, d_out) // 2``;
    targets whose clamp is 0 (e.g. a layer with no heads left) get no
    adapter. ``B`` starts at zero, so a fresh set leaves the model unchanged.
    """

    def __init__(self, rank: int, alpha: float, factors: dict[tuple[int, str], tuple[torch.Tensor, torch.Tensor]]):
        if rank < 1:
            raise ValidationError("LoRA rank must be >= 1")
        self.rank = int(rank)
        self.alpha = float(alpha)
        self.factors = factors
        self.merged = False

    @classmethod
    def init_for(cls, model: DecoderModel, rank: int = 8, alpha: float = 16.0, seed: int = 0) -> "LoraAdapterSet":
        if rank < 1:
            raise ValidationError("LoRA rank must be >= 1")
        gen = torch.Generator().manual_seed(int(seed))
        factors = {}
        for l in range(len(model.blocks)):
            for kind in PROJECTIONS:
                d_out, d_in = _target_shape(model, l, kind)
                r = min(rank, min(d_in, d_out) // 2)
                if r < 1:
                    continue
                bound = d_in**-0.5
                a = (torch.rand(r, d_in, generator=gen, dtype=DTYPE) * 2 - 1) * bound
                b = torch.zeros(d_out, r, dtype=DTYPE)
                factors[(l, kind)] = (a.requires_grad_(True), b.requires_grad_(True))
        return cls(rank, alpha, factors)

    def parameters(self) -> list[torch.Tensor]:
        return [t for pair in self.factors.values() for t in pair]

    def parameter_count(self) -> int:
        return sum(t.numel() for t in self.parameters())

    def delta(self, layer: int, kind: str) -> torch.Tensor:
        a, b = self.factors[(layer, kind)]
        return (self.alpha / a.shape[0]) * (b @ a)

    def deltas(self, layer: int) -> dict[str, torch.Tensor]:
        self._check_live()
        return {kind: self.delta(layer, kind) for kind in PROJECTIONS if (layer, kind) in self.factors}

    def check_fits(self, model: DecoderModel) -> None:
        for (l, kind), (a, b) in self.factors.items():
            if l >= len(model.blocks):
                raise ValidationError(f"adapter for layer {l} but model has {len(model.blocks)} layers")
            if (b.shape[0], a.shape[1]) != _target_shape(model, l, kind):
                raise ValidationError(
                    f"adapter ({l}, {kind}) expects weight {(b.shape[0], a.shape[1])}, "
                    f"model has {_target_shape(model, l, kind)}"
                )

    def _check_live(self) -> None:
        if self.merged:
            raise LoraStateError("adapters were already merged into a backbone")

    def detached(self) -> "LoraAdapterSet":
        return LoraAdapterSet(
            self.rank, self.alpha, {k: (a.detach().clone(), b.detach().clone()) for k, (a, b) in self.factors.items()}
        )

    # ------------------------------------------------------------ storage

    def to_dict(self) -> dict:
        return {
            "format": "sap-ecc-lora",
            "version": ADAPTER_FORMAT_VERSION,
            "rank": self.rank,
            "alpha": self.alpha,
            "scaling": "alpha/r",
            "targets": [
                {"layer": l, "kind": kind, "A": _encode_tensor(a), "B": _encode_tensor(b)}
                for (l, kind), (a, b) in sorted(self.factors.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LoraAdapterSet":
        if d.get("format") != "sap-ecc-lora":
            raise FormatError("not an adapter file")
        if d.get("version") != ADAPTER_FORMAT_VERSION:
            raise FormatError(f"adapter file version {d.get('version')!r}, expected {ADAPTER_FORMAT_VERSION}")
        if d.get("scaling") != "alpha/r":
            raise FormatError(f"unsupported adapter scaling {d.get('scaling')!r}")
        try:
            factors = {
                (int(t["layer"]), str(t["kind"])): (_decode_tensor(t["A"]), _decode_tensor(t["B"]))
                for t in d["targets"]
            }
            return cls(int(d["rank"]), float(d["alpha"]), factors)
        except (KeyError, ValueError) as exc:
            raise FormatError(f"corrupt adapter file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "LoraAdapterSet":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise FormatError(f"adapter file {path} is not valid JSON: {exc}") from None


def attach(model: DecoderModel, adapters: LoraAdapterSet) -> DecoderModel:
    """Copy of ``model`` whose attention projections run through ``adapters``."""
    adapters._check_live()
    adapters.check_fits(model)
    out = model.clone()
    out.adapters = adapters
    return out


def merge(model: DecoderModel, adapters: LoraAdapterSet | None = None) -> DecoderModel:
    """Fold ``W + (alpha/r) B A`` into the weights and consume the adapter set."""
    adapters = adapters if adapters is not None else model.adapters
    if adapters is None:
        raise LoraStateError("no adapters to merge")
    adapters._check_live()
    adapters.check_fits(model)
    out = model.clone()
    out.adapters = None
    with torch.no_grad():
        for (l, kind), (a, b) in adapters.factors.items():
            w = getattr(out.blocks[l], f"w_{kind}")
            w.copy_(lora_forward(w, a, b, adapters.alpha))
    adapters.merged = True
    return out


# ------------------------------------------------------------ distillation


def _signs(y: torch.Tensor) -> torch.Tensor:
    # a zero channel output counts as positive
    return torch.where(y < 0, -1.0, 1.0).to(DTYPE)


def kd_loss(teacher_logits, student_logits, y) -> torch.Tensor:
    """Mean bitwise KL(teacher || student) between clamped posteriors ``sigma(sign(y) f)``."""
    t = torch.as_tensor(teacher_logits, dtype=DTYPE)
    s = torch.as_tensor(student_logits, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    if t.shape != s.shape or t.shape != y.shape:
        raise ValidationError(f"shape mismatch: teacher {tuple(t.shape)}, student {tuple(s.shape)}, y {tuple(y.shape)}")
    sign = _signs(y)
    qt = torch.sigmoid(sign * t).clamp(KD_EPS, 1 - KD_EPS)
    qs = torch.sigmoid(sign * s).clamp(KD_EPS, 1 - KD_EPS)
    kl = qt * torch.log(qt / qs) + (1 - qt) * torch.log((1 - qt) / (1 - qs))
    return kl.mean()


# ---------------------------------------------------------------- recovery


@dataclass(frozen=True)
class RecoveryConfig:
    gamma: float = 1.0
    epochs: int = 10
    steps_per_epoch: int = 50
    batch_size: int = 128
    rank: int = 8
    alpha: float = 16.0
    lr_start: float = 3e-3
    lr_end: float = 1e-5
    snr_low_db: float = 2.0
    snr_high_db: float = 7.0
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError("gamma must be >= 0")
        if self.rank < 1:
            raise ValidationError("rank must be >= 1")
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValidationError("epochs, steps_per_epoch and batch_size must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError("need lr_start >= lr_end > 0")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


@dataclass
class RecoveryResult:
    adapters: LoraAdapterSet
    model: DecoderModel  # student with the trained adapters attached
    epoch_loss: list[float]
    step_loss: list[float] = field(repr=False, default_factory=list)
    kd_evaluations: int = 0


def recover(
    student: DecoderModel, teacher: DecoderModel | None, code: LinearCode, cfg: RecoveryConfig = RecoveryConfig()
) -> RecoveryResult:
    """Train fresh adapters on a frozen pruned student with loss ``BCE + gamma * KD``.

    The student and teacher are left untouched. With ``gamma == 0`` the
    teacher is never run and may be ``None``.
    """
    if cfg.gamma > 0 and teacher is None:
        raise ValidationError("a teacher is required when gamma > 0")
    adapters = LoraAdapterSet.init_for(student, cfg.rank, cfg.alpha, seed=cfg.seed)
    model = attach(student, adapters)
    for p in model.parameters():
        p.requires_grad_(False)
    ctx = code_context(code.pcm)
    kd_calls = 0

    def batch_loss(step: int) -> torch.Tensor:
        nonlocal kd_calls
        batch = sample_batch(code, cfg.batch_size, cfg.snr_low_db, cfg.snr_high_db, substream(cfg.seed, step))
        logits = model(batch.tokens, ctx)
        loss = bce_loss(logits, batch.targets)
        if cfg.gamma > 0:
            with torch.no_grad():
                t_logits = teacher(batch.tokens, ctx)
            loss = loss + cfg.gamma * kd_loss(t_logits, logits, torch.from_numpy(batch.y))
            kd_calls += 1
        return loss

    losses = adam_loop(adapters.parameters(), batch_loss, cfg.total_steps, cfg.lr_start, cfg.lr_end)
    for p in model.parameters():
        p.requires_grad_(True)
    return RecoveryResult(adapters, model, epoch_means(losses, cfg.steps_per_epoch), losses, kd_calls)


def adapter_ratio(adapters: LoraAdapterSet, backbone: DecoderModel) -> float:
    return adapters.parameter_count() / backbone.parameter_count()


def expected_adapter_count(model: DecoderModel, rank: int) -> int:
    """``sum r_t (d_in + d_out)`` over projections, with the per-target rank clamp."""
    total = 0
    for l in range(len(model.blocks)):
        for kind in PROJECTIONS:
            d_out, d_in = _target_shape(model, l, kind)
            r = min(rank, min(d_in, d_out) // 2)
            total += r * (d_in + d_out) if r >= 1 else 0
    return total

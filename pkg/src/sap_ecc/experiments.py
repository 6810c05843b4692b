"""Desk-scale experiment drivers: backbone pretraining, the similarity/overlap
correlation study, the low-similarity transfer probe and the prune+recover run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .catalog import catalog_get
from .channel import ChannelConfig, EvalPoint, evaluate
from .decoder import DecoderModel
from .errors import ValidationError
from .gf2 import LinearCode, permute_columns, rref_gf2, with_generator
from .library import Decision, MaskLibrary, select_or_create
from .lora import RecoveryConfig, RecoveryResult, recover
from .masks import DecoderArchitecture, StructuredMask, jaccard
from .pruning import CalibrationConfig, apply_mask, compact, derive_mask
from .spectrum import (
    DEFAULT_K,
    Metric,
    SimilarityParams,
    calibrate_beta_median,
    degree_wd_distance,
    laplacian_signature,
    spectral_distance,
    spectral_signature,
    spectral_similarity,
)
from .training import TrainConfig, train


def permuted_code(code: LinearCode, seed: int = 0) -> LinearCode:
    perm = np.random.default_rng(seed).permutation(code.n)
    return with_generator(f"{code.name}_PERM{seed}", code.family, permute_columns(code.pcm, perm))


def rref_code(code: LinearCode) -> LinearCode:
    return with_generator(f"{code.name}_RREF", code.family, rref_gf2(code.pcm))


@dataclass(frozen=True)
class CodePair:
    kind: str  # "family", "cross", "rref" or "perm"
    a: LinearCode
    b: LinearCode

    @property
    def label(self) -> str:
        return f"{self.a.name}|{self.b.name}"


def resolve_pair(a: str, b: str, kind: str | None = None) -> CodePair:
    """``b`` may be ``"RREF"`` or ``"PERM"`` (optionally ``"PERM:<seed>"``) for a self-pair."""
    code_a = catalog_get(a) if isinstance(a, str) else a
    tag = b.upper()
    if tag == "RREF":
        return CodePair("rref", code_a, rref_code(code_a))
    if tag.startswith("PERM"):
        seed = int(tag.split(":", 1)[1]) if ":" in tag else 0
        return CodePair("perm", code_a, permuted_code(code_a, seed))
    code_b = catalog_get(b)
    if kind is None:
        kind = "family" if code_a.family == code_b.family else "cross"
    return CodePair(kind, code_a, code_b)


# structural analogue of an indexed pair list: same-family, cross-family,
# RREF self-pairs and permutation self-pairs
DEFAULT_PAIRS: tuple[tuple[str, str], ...] = (
    ("LDPC_24_12", "LDPC_24_12_B"),
    ("LDPC_24_12", "LDPC_48_24"),
    ("BCH_15_7", "BCH_15_5"),
    ("POLAR_16_8", "POLAR_32_16"),
    ("HAMMING_7_4", "LDPC_48_24"),
    ("BCH_15_7", "POLAR_32_16"),
    ("POLAR_32_16", "LDPC_24_12"),
    ("HAMMING_7_4", "BCH_15_5"),
    ("BCH_15_7", "RREF"),
    ("LDPC_24_12", "RREF"),
    ("HAMMING_7_4", "PERM:1"),
    ("LDPC_24_12", "PERM:1"),
)


def default_pairs() -> list[CodePair]:
    return [resolve_pair(a, b) for a, b in DEFAULT_PAIRS]


def distinct_codes(pairs: Sequence[CodePair]) -> list[LinearCode]:
    seen: dict[str, LinearCode] = {}
    for p in pairs:
        for c in (p.a, p.b):
            seen.setdefault(c.name, c)
    return list(seen.values())


def pretrain_backbone(
    codes: Sequence[LinearCode], arch: DecoderArchitecture = DecoderArchitecture(), cfg: TrainConfig = TrainConfig()
) -> DecoderModel:
    """Train one shared backbone over a code mixture (round-robin by step)."""
    return train(DecoderModel(arch, seed=cfg.seed), list(codes), cfg).model


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    from scipy.stats import pearsonr

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise ValidationError("Pearson correlation needs at least 3 paired points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    return float(pearsonr(x, y).statistic)


# ------------------------------------------------------- correlation study


@dataclass
class PairRow:
    label: str
    kind: str
    d_adjacency: float
    d_laplacian: float
    d_wd: float
    jaccards: list[float] = field(default_factory=list)
    kappa_adjacency: float = math.nan
    kappa_laplacian: float = math.nan
    kappa_wd: float = math.nan

    @property
    def mean_jaccard(self) -> float:
        return float(np.mean(self.jaccards))


@dataclass
class CorrelationResult:
    rows: list[PairRow]
    beta: dict[str, float]
    rho: dict[str, float]
    seeds: list[int]


def pair_distances(pair: CodePair, K: int = DEFAULT_K) -> tuple[float, float, float]:
    adj = spectral_distance(spectral_signature(pair.a.pcm, K), spectral_signature(pair.b.pcm, K))
    lap = spectral_distance(laplacian_signature(pair.a.pcm, K), laplacian_signature(pair.b.pcm, K))
    return adj, lap, degree_wd_distance(pair.a.pcm, pair.b.pcm)


def correlation_study(
    pairs: Sequence[CodePair],
    backbones: dict[int, DecoderModel],
    target_ratio: float = 0.4,
    calib_frames: int = 1024,
    beta_adjacency: float = SimilarityParams().beta,
    K: int = DEFAULT_K,
    progress: Callable[[str], None] | None = None,
) -> CorrelationResult:
    """Similarity of each pair under three metrics versus dedicated-mask overlap.

    ``backbones`` maps a seed to the shared backbone trained with it; the
    same seed drives mask calibration. The adjacency similarity uses
    ``beta_adjacency``; the Laplacian and degree-distance similarities use a
    median-calibrated scale, since their distances live on other scales.
    Pearson coefficients are computed on per-pair means over seeds.
    """
    if len(pairs) < 3:
        raise ValidationError("the correlation study needs at least 3 pairs")
    rows = []
    for p in pairs:
        rows.append(PairRow(p.label, p.kind, *pair_distances(p, K)))
    beta = {
        "adjacency": beta_adjacency,
        "laplacian": calibrate_beta_median([r.d_laplacian for r in rows]),
        "wd": calibrate_beta_median([r.d_wd for r in rows]),
    }
    for r in rows:
        r.kappa_adjacency = math.exp(-beta["adjacency"] * r.d_adjacency)
        r.kappa_laplacian = math.exp(-beta["laplacian"] * r.d_laplacian)
        r.kappa_wd = math.exp(-beta["wd"] * r.d_wd)
    codes = distinct_codes(pairs)
    for seed, model in sorted(backbones.items()):
        calib = CalibrationConfig(frames=calib_frames, seed=seed)
        masks: dict[str, StructuredMask] = {}
        for c in codes:
            masks[c.name] = derive_mask(model, c, target_ratio, calib)
            if progress:
                progress(f"seed {seed}: mask for {c.name}")
        for p, r in zip(pairs, rows):
            r.jaccards.append(jaccard(masks[p.a.name], masks[p.b.name]))
    mj = [r.mean_jaccard for r in rows]
    rho = {
        "adjacency": pearson([r.kappa_adjacency for r in rows], mj),
        "laplacian": pearson([r.kappa_laplacian for r in rows], mj),
        "wd": pearson([r.kappa_wd for r in rows], mj),
    }
    return CorrelationResult(rows, beta, rho, sorted(backbones))


# ------------------------------------------------------------ evaluation


def neural_ber(model: DecoderModel, code: LinearCode, ebn0_db: float, seed: int, frames: int = 20000) -> EvalPoint:
    """BER at one point on a fixed seed, so that models can be compared on identical noise."""
    cfg = ChannelConfig(ebn0_db, code.rate, seed)
    return evaluate([cfg], code, model.decoder_fn(code.pcm), min_frames=frames, min_errors=1)[0]


def prune_and_recover(
    backbone: DecoderModel,
    code: LinearCode,
    mask: StructuredMask,
    rcfg: RecoveryConfig,
    teacher: DecoderModel | None = None,
) -> RecoveryResult:
    """Apply ``mask``, compact, then train adapters against ``teacher`` (default: the backbone)."""
    student = compact(apply_mask(backbone, mask))
    return recover(student, teacher if teacher is not None else backbone, code, rcfg)


@dataclass
class TransferTrial:
    seed: int
    ber_sap: float
    ber_transfer: float
    decision: Decision
    kappa: float | None

    @property
    def transfer_worse(self) -> bool:
        return self.ber_transfer > self.ber_sap


@dataclass
class TransferResult:
    source: str
    target: str
    kappa: float
    trials: list[TransferTrial]

    @property
    def worse_count(self) -> int:
        return sum(t.transfer_worse for t in self.trials)


def transfer_probe(
    source: LinearCode,
    target: LinearCode,
    backbones: dict[int, DecoderModel],
    rcfg: RecoveryConfig = RecoveryConfig(),
    ebn0_db: float = 5.0,
    frames: int = 20000,
    target_ratio: float = 0.4,
    calib_frames: int = 1024,
) -> TransferResult:
    """SAP-selected mask versus the source code's mask, both recovered identically on ``target``.

    A library seeded with the source code's dedicated mask is queried with
    the target; below the reuse threshold SAP creates a dedicated target
    mask. The transferred arm instead forces the source mask onto the target.
    """
    kappa = spectral_similarity(
        spectral_distance(spectral_signature(source.pcm), spectral_signature(target.pcm))
    )
    trials = []
    for seed, model in sorted(backbones.items()):
        calib = CalibrationConfig(frames=calib_frames, seed=seed)
        src_mask = derive_mask(model, source, target_ratio, calib)
        lib = MaskLibrary(model.arch).add(source.pcm, src_mask, source.name)
        sel = select_or_create(lib, target.pcm, lambda pcm: derive_mask(model, target, target_ratio, calib), target.name)
        r = RecoveryConfig(**{**rcfg.__dict__, "seed": seed})
        sap = prune_and_recover(model, target, sel.mask, r)
        xfer = prune_and_recover(model, target, src_mask, r)
        eval_seed = 10_000 + seed
        trials.append(
            TransferTrial(
                seed,
                neural_ber(sap.model, target, ebn0_db, eval_seed, frames).ber,
                neural_ber(xfer.model, target, ebn0_db, eval_seed, frames).ber,
                sel.decision,
                sel.similarity,
            )
        )
    return TransferResult(source.name, target.name, kappa, trials)


@dataclass
class EndToEndResult:
    ber_hard: float
    ber_baseline: float
    ber_pruned: float
    ber_recovered: float
    flops_reduction: float
    adapter_ratio: float

    @property
    def recovered_over_baseline(self) -> float:
        return self.ber_recovered / self.ber_baseline


def end_to_end(
    code: LinearCode,
    arch: DecoderArchitecture = DecoderArchitecture(),
    pre: TrainConfig = TrainConfig(epochs=10, steps_per_epoch=100),
    finetune: TrainConfig | None = None,
    rcfg: RecoveryConfig = RecoveryConfig(),
    target_ratio: float = 0.4,
    ebn0_db: float = 4.0,
    frames: int = 30000,
    eval_seed: int = 4242,
) -> EndToEndResult:
    """Train, prune by Fisher score, recover with adapters and compare BERs on shared noise.

    The unpruned baseline gets ``finetune`` extra full-weight steps (same
    count as the recovery by default) so that it sees as much training as
    the recovered student.
    """
    from .channel import hard_decision
    from .lora import adapter_ratio
    from .masks import retained_ratio

    backbone = train(DecoderModel(arch, seed=pre.seed), code, pre).model
    if finetune is None:
        finetune = TrainConfig(
            epochs=rcfg.epochs,
            steps_per_epoch=rcfg.steps_per_epoch,
            batch_size=rcfg.batch_size,
            lr_start=pre.lr_end * 100,
            lr_end=pre.lr_end,
            seed=pre.seed + 1,
        )
    baseline = train(backbone, code, finetune).model
    mask = derive_mask(backbone, code, target_ratio, CalibrationConfig(seed=pre.seed))
    student = compact(apply_mask(backbone, mask))
    rec = recover(student, backbone, code, rcfg)
    hard = evaluate([ChannelConfig(ebn0_db, code.rate, eval_seed)], code, hard_decision, min_frames=frames, min_errors=1)[0]
    return EndToEndResult(
        hard.ber,
        neural_ber(baseline, code, ebn0_db, eval_seed, frames).ber,
        neural_ber(student, code, ebn0_db, eval_seed, frames).ber,
        neural_ber(rec.model, code, ebn0_db, eval_seed, frames).ber,
        1.0 - retained_ratio(mask, code.n + code.pcm.rows),
        adapter_ratio(rec.adapters, student),
    )

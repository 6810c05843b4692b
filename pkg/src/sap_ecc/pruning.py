"""Fisher importance, FLOPs-budgeted mask selection, masking and compaction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

from .channel import substream
from .decoder import DTYPE, DecoderModel, code_context, per_sample_bce
from .errors import BudgetError, FormatError, ValidationError
from .gf2 import LinearCode
from .masks import DecoderArchitecture, StructuredMask, masked_flops, model_flops, unit_flops
from .training import sample_batch


@dataclass(frozen=True, eq=False)
class ImportanceScores:
    head_scores: np.ndarray  # (L, h)
    ffn_scores: np.ndarray  # (L, d_ffn)
    calib_frames: int
    calib_seed: int

    def __post_init__(self):
        for name in ("head_scores", "ffn_scores"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise ValidationError(f"{name} must be finite and non-negative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def scaled(self, c: float) -> "ImportanceScores":
        return ImportanceScores(self.head_scores * c, self.ffn_scores * c, self.calib_frames, self.calib_seed)

    def to_dict(self) -> dict:
        return {
            "head_scores": [[format(v, ".17g") for v in row] for row in self.head_scores],
            "ffn_scores": [[format(v, ".17g") for v in row] for row in self.ffn_scores],
            "calib_frames": self.calib_frames,
            "calib_seed": self.calib_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImportanceScores":
        try:
            return cls(
                np.array([[float(v) for v in row] for row in d["head_scores"]]),
                np.array([[float(v) for v in row] for row in d["ffn_scores"]]),
                int(d["calib_frames"]),
                int(d["calib_seed"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad importance-score record: {exc}") from None


@dataclass(frozen=True)
class CalibrationConfig:
    frames: int = 1024
    snr_low_db: float = 2.0
    snr_high_db: float = 7.0
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        if self.frames < 1:
            raise ValidationError("calibration needs at least one frame")


def squared_gate_gradients(
    per_sample_loss: Callable[[list[torch.Tensor]], torch.Tensor], gates: list[torch.Tensor]
) -> list[torch.Tensor]:
    """``sum_b (d loss_b / d g)^2`` for gates with a leading batch dimension.

    Each sample owns its own copy of every gate, so differentiating the
    summed loss yields per-sample gradients in one backward pass.
    """
    gates = [g.detach().requires_grad_(True) for g in gates]
    losses = per_sample_loss(gates)
    grads = torch.autograd.grad(losses.sum(), gates, allow_unused=True)
    return [
        torch.zeros(g.shape[1:], dtype=g.dtype) if gr is None else (gr**2).sum(dim=0)
        for g, gr in zip(gates, grads)
    ]


def fisher_importance(
    model: DecoderModel, code: LinearCode, calib: CalibrationConfig = CalibrationConfig()
) -> ImportanceScores:
    """Diagonal-Fisher score per head and per FFN channel.

    A unit gate of 1 multiplies each head's context (before the output
    projection) and each FFN activation; the score is the sum over
    calibration frames of the squared per-frame loss gradient at the gate.
    Units physically absent from a compacted model score 0.
    """
    arch = model.arch
    ctx = code_context(code.pcm)
    head = np.zeros((arch.layers, arch.heads_per_layer))
    ffn = np.zeros((arch.layers, arch.d_ffn))
    done = 0
    chunk = 0
    while done < calib.frames:
        size = min(calib.batch_size, calib.frames - done)
        batch = sample_batch(code, size, calib.snr_low_db, calib.snr_high_db, substream(calib.seed, chunk))
        gates = []
        for blk in model.blocks:
            gates.append(torch.ones(size, blk.heads, dtype=DTYPE))
            gates.append(torch.ones(size, blk.d_ffn, dtype=DTYPE))

        def loss_fn(gs):
            pairs = [(gs[2 * l], gs[2 * l + 1]) for l in range(arch.layers)]
            return per_sample_bce(model(batch.tokens, ctx, gates=pairs), batch.targets)

        sq = squared_gate_gradients(loss_fn, gates)
        for l in range(arch.layers):
            head[l, model.head_ids[l]] += sq[2 * l].numpy()
            ffn[l, model.ffn_ids[l]] += sq[2 * l + 1].numpy()
        done += size
        chunk += 1
    return ImportanceScores(head, ffn, calib.frames, calib.seed)


# ------------------------------------------------------------- selection

# tie-break order: lower importance, FFN before heads, lower layer, lower index
_KIND_ORDER = {"ffn": 0, "head": 1}


def greedy_removal(
    units: Sequence[tuple[float, str, int, int, int]],
    total_flops: int,
    target_ratio: float,
    protect_last_head: bool = True,
) -> set[tuple[str, int, int]]:
    """Remove units in ascending importance until the FLOPs budget is met.

    ``units`` holds ``(importance, kind, layer, index, flops)`` tuples. The
    loop stops as soon as retained FLOPs fall to ``(1 - target_ratio)`` of
    ``total_flops``. The last remaining head is never removed.
    """
    if not 0.0 <= target_ratio < 1.0:
        raise ValidationError(f"target_ratio must lie in [0, 1), got {target_ratio}")
    budget = (1.0 - target_ratio) * total_flops
    slack = 1e-12 * total_flops
    retained = sum(u[4] for u in units)
    heads_left = sum(1 for u in units if u[1] == "head")
    removed: set[tuple[str, int, int]] = set()
    for score, kind, layer, index, flops in sorted(units, key=lambda u: (u[0], _KIND_ORDER[u[1]], u[2], u[3])):
        if retained <= budget + slack:
            break
        if kind == "head" and protect_last_head and heads_left == 1:
            continue
        removed.add((kind, layer, index))
        retained -= flops
        heads_left -= kind == "head"
    if retained > budget + slack:
        raise BudgetError(
            f"cannot prune {target_ratio:.0%} of FLOPs without removing every attention head"
        )
    return removed


def select_mask(
    scores: ImportanceScores, arch: DecoderArchitecture, seq_len: int, target_ratio: float
) -> StructuredMask:
    head_cost, ffn_cost = unit_flops(arch, seq_len)
    units = [
        (float(scores.head_scores[l, i]), "head", l, i, head_cost)
        for l in range(arch.layers)
        for i in range(arch.heads_per_layer)
    ] + [
        (float(scores.ffn_scores[l, i]), "ffn", l, i, ffn_cost)
        for l in range(arch.layers)
        for i in range(arch.d_ffn)
    ]
    removed = greedy_removal(units, model_flops(arch, seq_len), target_ratio)
    head_bits = np.ones((arch.layers, arch.heads_per_layer), dtype=np.uint8)
    ffn_bits = np.ones((arch.layers, arch.d_ffn), dtype=np.uint8)
    for kind, l, i in removed:
        (head_bits if kind == "head" else ffn_bits)[l, i] = 0
    return StructuredMask(arch, head_bits, ffn_bits)


def derive_mask(
    model: DecoderModel,
    code: LinearCode,
    target_ratio: float = 0.4,
    calib: CalibrationConfig = CalibrationConfig(),
) -> StructuredMask:
    """Code-conditioned mask: Fisher scores on ``code`` then greedy selection."""
    scores = fisher_importance(model, code, calib)
    return select_mask(scores, model.arch, code.n + code.pcm.rows, target_ratio)


# ----------------------------------------------------- masking/compaction


def apply_mask(model: DecoderModel, mask: StructuredMask) -> DecoderModel:
    """Copy of ``model`` whose forward pass zeroes the pruned units."""
    if mask.arch != model.arch:
        raise ValidationError(f"mask architecture {mask.arch} does not match model {model.arch}")
    out = model.clone()
    out.active_mask = None if mask.is_full else mask
    return out


def compact(model: DecoderModel, mask: StructuredMask | None = None) -> DecoderModel:
    """Physically drop pruned head slices and FFN channels.

    Uses ``model.active_mask`` when ``mask`` is omitted. The result has no
    active mask; its ``head_ids``/``ffn_ids`` record which original units
    survive.
    """
    mask = mask if mask is not None else model.active_mask
    if mask is None:
        return model.clone()
    if mask.arch != model.arch:
        raise ValidationError("mask architecture does not match the model")
    hd = model.arch.head_dim
    layout = []
    keeps = []
    for l, (hids, fids) in enumerate(zip(model.head_ids, model.ffn_ids)):
        keep_h = np.flatnonzero(mask.head_bits[l][hids])
        keep_f = np.flatnonzero(mask.ffn_bits[l][fids])
        layout.append((hids[keep_h], fids[keep_f]))
        keeps.append((keep_h, keep_f))
    out = DecoderModel(model.arch, seed=None, layout=layout)
    with torch.no_grad():
        out.type_embed.copy_(model.type_embed)
        out.final_scale.copy_(model.final_scale)
        out.final_offset.copy_(model.final_offset)
        out.out_w.copy_(model.out_w)
        out.out_b.copy_(model.out_b)
        for src, dst, (keep_h, keep_f) in zip(model.blocks, out.blocks, keeps):
            rows = torch.as_tensor(
                (keep_h[:, None] * hd + np.arange(hd)[None, :]).reshape(-1), dtype=torch.long
            )
            for name in ("ln1_scale", "ln1_offset", "ln2_scale", "ln2_offset"):
                getattr(dst, name).copy_(getattr(src, name))
            dst.w_q.copy_(src.w_q[rows])
            dst.w_k.copy_(src.w_k[rows])
            dst.w_v.copy_(src.w_v[rows])
            dst.w_o.copy_(src.w_o[:, rows])
            f = torch.as_tensor(keep_f, dtype=torch.long)
            dst.ffn_in.copy_(src.ffn_in[f])
            dst.ffn_in_bias.copy_(src.ffn_in_bias[f])
            dst.ffn_out.copy_(src.ffn_out[:, f])
    return out


def pruning_report(model: DecoderModel, mask: StructuredMask, compacted: DecoderModel, seq_len: int) -> dict:
    full = model_flops(mask.arch, seq_len)
    kept = masked_flops(mask.arch, mask, seq_len)
    head_cost, ffn_cost = unit_flops(mask.arch, seq_len)
    return {
        "seq_len": seq_len,
        "flops_full": full,
        "flops_pruned": kept,
        "flops_reduction": 1.0 - kept / full,
        "max_unit_flops_fraction": max(head_cost, ffn_cost) / full,
        "params_full": model.parameter_count(),
        "params_pruned": compacted.parameter_count(),
        "heads_retained": int(mask.head_bits.sum()),
        "ffn_retained": int(mask.ffn_bits.sum()),
    }


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Structured pruning masks and the FLOPs model that prices them.

A mask bit of 1 keeps an attention head or FFN channel; 0 prunes it.
Masks are addressed by the backbone architecture, not by a code, so any
mask applies to any code decoded by that backbone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

MASK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class DecoderArchitecture:
    layers: int = 2
    heads_per_layer: int = 4
    d_model: int = 32
    d_ffn: int = 64

    def __post_init__(self):
        for name in ("layers", "heads_per_layer", "d_model", "d_ffn"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.d_model % self.heads_per_layer:
            raise ValidationError("d_model must be divisible by heads_per_layer")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads_per_layer

    def to_dict(self) -> dict:
        return {"L": self.layers, "h": self.heads_per_layer, "d_model": self.d_model, "d_ffn": self.d_ffn}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderArchitecture":
        try:
            return cls(int(d["L"]), int(d["h"]), int(d["d_model"]), int(d["d_ffn"]))
        except KeyError as exc:
            raise FormatError(f"architecture header missing field {exc}") from None


def _frozen_bits(data, shape: tuple[int, int], what: str) -> np.ndarray:
    arr = np.asarray(data)
    if arr.shape != shape:
        raise ValidationError(f"{what} has shape {arr.shape}, expected {shape}")
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{what} entries must be 0 or 1")
    arr = arr.astype(np.uint8)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StructuredMask:
    arch: DecoderArchitecture
    head_bits: np.ndarray  # (L, h)
    ffn_bits: np.ndarray  # (L, d_ffn)

    def __post_init__(self):
        a = self.arch
        object.__setattr__(
            self, "head_bits", _frozen_bits(self.head_bits, (a.layers, a.heads_per_layer), "head_bits")
        )
        object.__setattr__(self, "ffn_bits", _frozen_bits(self.ffn_bits, (a.layers, a.d_ffn), "ffn_bits"))

    @classmethod
    def full(cls, arch: DecoderArchitecture) -> "StructuredMask":
        return cls(
            arch,
            np.ones((arch.layers, arch.heads_per_layer), dtype=np.uint8),
            np.ones((arch.layers, arch.d_ffn), dtype=np.uint8),
        )

    @property
    def is_full(self) -> bool:
        return bool(self.head_bits.all() and self.ffn_bits.all())

    def retained_units(self) -> set[tuple[int, str, int]]:
        heads = {(int(l), "head", int(i)) for l, i in zip(*np.nonzero(self.head_bits))}
        ffn = {(int(l), "ffn", int(i)) for l, i in zip(*np.nonzero(self.ffn_bits))}
        return heads | ffn

    def __eq__(self, other):
        if not isinstance(other, StructuredMask):
            return NotImplemented
        return (
            self.arch == other.arch
            and np.array_equal(self.head_bits, other.head_bits)
            and np.array_equal(self.ffn_bits, other.ffn_bits)
        )

    def __or__(self, other: "StructuredMask") -> "StructuredMask":
        _check_same_arch(self, other)
        return StructuredMask(self.arch, self.head_bits | other.head_bits, self.ffn_bits | other.ffn_bits)

    def __and__(self, other: "StructuredMask") -> "StructuredMask":
        _check_same_arch(self, other)
        return StructuredMask(self.arch, self.head_bits & other.head_bits, self.ffn_bits & other.ffn_bits)

    def to_dict(self) -> dict:
        return {
            "version": MASK_FORMAT_VERSION,
            "arch": self.arch.to_dict(),
            "head_bits": self.head_bits.tolist(),
            "ffn_bits": self.ffn_bits.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StructuredMask":
        if d.get("version") != MASK_FORMAT_VERSION:
            raise FormatError(
                f"mask format version {d.get('version')!r}, expected {MASK_FORMAT_VERSION}"
            )
        try:
            return cls(DecoderArchitecture.from_dict(d["arch"]), d["head_bits"], d["ffn_bits"])
        except KeyError as exc:
            raise FormatError(f"mask missing field {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "StructuredMask":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise FormatError(f"mask file is not valid JSON: {exc}") from None


def _check_same_arch(a: StructuredMask, b: StructuredMask) -> None:
    if a.arch != b.arch:
        raise ValidationError(f"mask architectures differ: {a.arch} vs {b.arch}")


def jaccard(a: StructuredMask, b: StructuredMask) -> float:
    """Overlap of the retained-unit sets. Two empty masks count as identical."""
    _check_same_arch(a, b)
    inter = int((a.head_bits & b.head_bits).sum() + (a.ffn_bits & b.ffn_bits).sum())
    union = int((a.head_bits | b.head_bits).sum() + (a.ffn_bits | b.ffn_bits).sum())
    return 1.0 if union == 0 else inter / union


def unit_flops(arch: DecoderArchitecture, seq_len: int) -> tuple[int, int]:
    """FLOPs (2 x multiply-accumulates) owned by one head and by one FFN channel.

    A head owns its Q/K/V projections, its score and value products, and its
    slice of the output projection. An FFN channel owns one row of the input
    projection and one column of the output projection.
    """
    if seq_len < 1:
        raise ValidationError("seq_len must be >= 1")
    t, d, hd = seq_len, arch.d_model, arch.head_dim
    head = 2 * t * (3 * d * hd + hd * d) + 2 * t * t * hd * 2
    ffn = 2 * t * (d + d)
    return head, ffn


def model_flops(arch: DecoderArchitecture, seq_len: int) -> int:
    head, ffn = unit_flops(arch, seq_len)
    return arch.layers * (arch.heads_per_layer * head + arch.d_ffn * ffn)


def masked_flops(arch: DecoderArchitecture, mask: StructuredMask, seq_len: int) -> int:
    if mask.arch != arch:
        raise ValidationError(f"mask architecture {mask.arch} does not match {arch}")
    head, ffn = unit_flops(arch, seq_len)
    return int(mask.head_bits.sum()) * head + int(mask.ffn_bits.sum()) * ffn


def retained_ratio(mask: StructuredMask, seq_len: int) -> float:
    return masked_flops(mask.arch, mask, seq_len) / model_flops(mask.arch, seq_len)

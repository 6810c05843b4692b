"""Spectral mask library: nearest-signature retrieval, threshold reuse and on-demand growth."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import FormatError, ValidationError
from .gf2 import ParityCheckMatrix
from .masks import DecoderArchitecture, StructuredMask
from .spectrum import DEFAULT_BETA, DEFAULT_K, Metric, SpectralSignature, spectral_distance, spectral_signature

LIBRARY_FORMAT_VERSION = 1
DEFAULT_TAU = 0.5


class Decision(enum.Enum):
    REUSED = "REUSED"
    CREATED = "CREATED"


@dataclass(frozen=True)
class LibraryEntry:
    signature: SpectralSignature
    mask: StructuredMask
    code_label: str = ""
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))


@dataclass(frozen=True)
class Retrieval:
    index: int
    distance: float
    similarity: float


@dataclass(frozen=True)
class Selection:
    mask: StructuredMask
    decision: Decision
    similarity: float | None
    index: int
    library: "MaskLibrary"
    distance: float | None = None


@dataclass(frozen=True)
class MaskLibrary:
    """Append-only list of ``(signature, mask)`` entries sharing one ``K`` and backbone."""

    arch: DecoderArchitecture
    entries: tuple[LibraryEntry, ...] = ()
    K: int = DEFAULT_K
    tau: float = DEFAULT_TAU
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be >= 1")
        if not 0.0 < self.tau <= 1.0:
            raise ValidationError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")
        object.__setattr__(self, "entries", tuple(self.entries))
        for i, e in enumerate(self.entries):
            self._check_entry(e, f"entry {i}")

    def _check_entry(self, e: LibraryEntry, what: str) -> None:
        if e.signature.k_used != self.K:
            raise ValidationError(f"{what}: signature has K={e.signature.k_used}, library uses K={self.K}")
        if e.signature.metric is not Metric.ADJACENCY:
            raise ValidationError(f"{what}: library signatures must be adjacency signatures")
        if e.mask.arch != self.arch:
            raise ValidationError(f"{what}: mask architecture {e.mask.arch} differs from library {self.arch}")

    def __len__(self) -> int:
        return len(self.entries)

    def signature_of(self, pcm: ParityCheckMatrix) -> SpectralSignature:
        return spectral_signature(pcm, self.K)

    def with_entry(self, entry: LibraryEntry) -> "MaskLibrary":
        self._check_entry(entry, "new entry")
        return replace(self, entries=self.entries + (entry,))

    def add(self, pcm: ParityCheckMatrix, mask: StructuredMask, label: str = "") -> "MaskLibrary":
        return self.with_entry(LibraryEntry(self.signature_of(pcm), mask, label))


def retrieve(lib: MaskLibrary, sig: SpectralSignature) -> Retrieval:
    """Nearest entry by Euclidean signature distance; the earliest entry wins ties."""
    if not lib.entries:
        raise ValidationError("library is empty; use select_or_create to add a first entry")
    if sig.k_used != lib.K:
        raise ValidationError(f"signature has K={sig.k_used}, library uses K={lib.K}")
    dists = [spectral_distance(e.signature, sig) for e in lib.entries]
    best = int(np.argmin(dists))  # first minimum
    d = dists[best]
    return Retrieval(best, d, math.exp(-lib.beta * d))


def select_or_create(
    lib: MaskLibrary,
    pcm: ParityCheckMatrix,
    derive_mask: Callable[[ParityCheckMatrix], StructuredMask],
    label: str = "",
) -> Selection:
    """Reuse the nearest stored mask when its similarity reaches ``tau``, else derive and store one.

    The input library is never modified; ``Selection.library`` is the
    library after the call. An empty library always takes the create path.
    """
    sig = lib.signature_of(pcm)
    hit = retrieve(lib, sig) if lib.entries else None
    if hit is not None and hit.similarity >= lib.tau:
        return Selection(lib.entries[hit.index].mask, Decision.REUSED, hit.similarity, hit.index, lib, hit.distance)
    mask = derive_mask(pcm)
    if not isinstance(mask, StructuredMask):
        raise ValidationError("derive_mask must return a StructuredMask")
    grown = lib.with_entry(LibraryEntry(sig, mask, label))
    return Selection(
        mask,
        Decision.CREATED,
        None if hit is None else hit.similarity,
        len(grown) - 1,
        grown,
        None if hit is None else hit.distance,
    )


# ------------------------------------------------------------------ storage


def library_to_dict(lib: MaskLibrary) -> dict:
    return {
        "version": LIBRARY_FORMAT_VERSION,
        "K": lib.K,
        "tau": format(lib.tau, ".17g"),
        "beta": format(lib.beta, ".17g"),
        "arch": lib.arch.to_dict(),
        "entries": [
            {
                "label": e.code_label,
                "created_at": e.created_at,
                "source_dims": list(e.signature.source_dims),
                "signature": [format(v, ".17g") for v in e.signature.values],
                "mask": {"head_bits": e.mask.head_bits.tolist(), "ffn_bits": e.mask.ffn_bits.tolist()},
            }
            for e in lib.entries
        ],
    }


def library_from_dict(d: dict) -> MaskLibrary:
    if d.get("version") != LIBRARY_FORMAT_VERSION:
        raise FormatError(f"library format version {d.get('version')!r}, expected {LIBRARY_FORMAT_VERSION}")
    try:
        arch = DecoderArchitecture.from_dict(d["arch"])
        entries = tuple(
            LibraryEntry(
                SpectralSignature(
                    np.array([float(v) for v in e["signature"]]), tuple(e["source_dims"]), Metric.ADJACENCY
                ),
                StructuredMask(arch, e["mask"]["head_bits"], e["mask"]["ffn_bits"]),
                e.get("label", ""),
                e.get("created_at", ""),
            )
            for e in d["entries"]
        )
        return MaskLibrary(arch, entries, int(d["K"]), float(d["tau"]), float(d["beta"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise FormatError(f"corrupt library record: {exc!r}") from None


def save(lib: MaskLibrary, path) -> None:
    Path(path).write_text(json.dumps(library_to_dict(lib), indent=1) + "\n")


def load(path) -> MaskLibrary:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"library file {path} is not valid JSON: {exc}") from None
    except FileNotFoundError:
        raise FormatError(f"library file {path} does not exist") from None
    if not isinstance(data, dict):
        raise FormatError(f"library file {path} does not hold a JSON object")
    return library_from_dict(data)


def libraries_equal(a: MaskLibrary, b: MaskLibrary) -> bool:
    return (
        a.arch == b.arch
        and a.K == b.K
        and a.tau == b.tau
        and a.beta == b.beta
        and len(a.entries) == len(b.entries)
        and all(
            x.signature == y.signature and x.mask == y.mask and x.code_label == y.code_label
            for x, y in zip(a.entries, b.entries)
        )
    )

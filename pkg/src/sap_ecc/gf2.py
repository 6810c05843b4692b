"""GF(2) linear algebra for binary linear block codes.

Matrices are dense ``uint8`` arrays. Row reduction packs each row into a
Python int so that a row operation is a single XOR.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlistParseError, RankDeficiencyError, ValidationError


def _as_bits(data, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == bool:
        arr = arr.astype(np.uint8)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} entries must be 0 or 1")
    return arr.astype(np.uint8)


@dataclass(frozen=True, eq=False)
class ParityCheckMatrix:
    """An ``(n-k) x n`` binary parity-check matrix.

    Instances are immutable; ``bits`` is a read-only array.
    """

    bits: np.ndarray

    def __post_init__(self):
        arr = _as_bits(self.bits, "parity-check matrix")
        if arr.ndim != 2:
            raise ValidationError(f"parity-check matrix must be 2-D, got shape {arr.shape}")
        rows, cols = arr.shape
        if rows < 1 or cols < 2 or rows >= cols:
            raise ValidationError(
                f"parity-check matrix needs 1 <= rows < cols and cols >= 2, got {rows}x{cols}"
            )
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[int]]) -> "ParityCheckMatrix":
        return cls(np.array(rows, dtype=np.uint8))

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def n(self) -> int:
        return self.cols

    @property
    def k(self) -> int:
        return self.cols - self.rows

    @property
    def nnz(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    def __repr__(self):
        return f"ParityCheckMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


class CodeFamily(enum.Enum):
    BCH = "BCH"
    LDPC = "LDPC"
    POLAR = "POLAR"
    HAMMING = "HAMMING"
    CUSTOM = "CUSTOM"


@dataclass(frozen=True, eq=False)
class LinearCode:
    name: str
    family: CodeFamily
    pcm: ParityCheckMatrix
    gen: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.gen is not None:
            gen = _as_bits(self.gen, "generator matrix")
            if gen.ndim != 2 or gen.shape[1] != self.pcm.n:
                raise ValidationError(
                    f"{self.name}: generator shape {gen.shape} incompatible with n={self.pcm.n}"
                )
            if (gen.astype(np.int64) @ self.pcm.bits.T.astype(np.int64) % 2).any():
                raise ValidationError(f"{self.name}: G H^T != 0 over GF(2)")
            gen = np.ascontiguousarray(gen)
            gen.setflags(write=False)
            object.__setattr__(self, "gen", gen)
        if not 0 < self.k < self.n:
            raise ValidationError(f"{self.name}: rate {self.k}/{self.n} outside (0, 1)")

    @property
    def n(self) -> int:
        return self.pcm.n

    @property
    def k(self) -> int:
        if self.gen is not None:
            return self.gen.shape[0]
        return self.pcm.k

    @property
    def rate(self) -> float:
        return self.k / self.n


# ---------------------------------------------------------------- row reduction


def _pack_rows(bits: np.ndarray) -> list[int]:
    # column 0 is the most significant bit, so "leftmost pivot" == highest bit
    n = bits.shape[1]
    weights = [1 << (n - 1 - c) for c in range(n)]
    return [sum(w for w, b in zip(weights, row) if b) for row in bits.tolist()]


def _unpack_rows(rows: list[int], n: int) -> np.ndarray:
    out = np.zeros((len(rows), n), dtype=np.uint8)
    for i, r in enumerate(rows):
        for c in range(n):
            if (r >> (n - 1 - c)) & 1:
                out[i, c] = 1
    return out


def _rref_packed(rows: list[int], n: int) -> tuple[list[int], list[int]]:
    rows = list(rows)
    pivots: list[int] = []
    r = 0
    for c in range(n):
        mask = 1 << (n - 1 - c)
        pivot = next((i for i in range(r, len(rows)) if rows[i] & mask), None)
        if pivot is None:
            continue
        rows[r], rows[pivot] = rows[pivot], rows[r]
        for i in range(len(rows)):
            if i != r and rows[i] & mask:
                rows[i] ^= rows[r]
        pivots.append(c)
        r += 1
        if r == len(rows):
            break
    return rows, pivots


def rref_gf2(pcm: ParityCheckMatrix) -> ParityCheckMatrix:
    """Reduced row echelon form over GF(2); zero rows stay at the bottom."""
    rows, _ = _rref_packed(_pack_rows(pcm.bits), pcm.n)
    return ParityCheckMatrix(_unpack_rows(rows, pcm.n))


def gf2_rank(bits: np.ndarray) -> int:
    bits = _as_bits(bits)
    _, pivots = _rref_packed(_pack_rows(bits), bits.shape[1])
    return len(pivots)


def permute_columns(pcm: ParityCheckMatrix, perm: Sequence[int]) -> ParityCheckMatrix:
    """Move column ``c`` to position ``perm[c]``."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (pcm.n,) or not np.array_equal(np.sort(perm), np.arange(pcm.n)):
        raise ValidationError(f"perm must be a bijection on 0..{pcm.n - 1}")
    out = np.zeros_like(pcm.bits)
    out[:, perm] = pcm.bits
    return ParityCheckMatrix(out)


def inverse_permutation(perm: Sequence[int]) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def systematic_generator(pcm: ParityCheckMatrix) -> np.ndarray:
    """Return a ``k x n`` generator whose rows span the null space of ``pcm``.

    The generator is systematic on the non-pivot columns of the RREF: row
    ``i`` has a single one among the free columns, at the ``i``-th free
    column.

    Raises
    ------
    RankDeficiencyError
        If ``pcm`` does not have full row rank.
    """
    rows, pivots = _rref_packed(_pack_rows(pcm.bits), pcm.n)
    if len(pivots) < pcm.rows:
        raise RankDeficiencyError(len(pivots), pcm.rows)
    reduced = _unpack_rows(rows, pcm.n)
    free = [c for c in range(pcm.n) if c not in set(pivots)]
    gen = np.zeros((len(free), pcm.n), dtype=np.uint8)
    for i, f in enumerate(free):
        gen[i, f] = 1
        for r, p in enumerate(pivots):
            gen[i, p] = reduced[r, f]
    return gen


def syndrome(pcm: ParityCheckMatrix, word) -> np.ndarray:
    """``pcm @ word.T mod 2``. Accepts a single word or a batch (last axis = n)."""
    word = np.asarray(word)
    if word.ndim == 0 or word.shape[-1] != pcm.n:
        raise ValidationError(f"word shape {word.shape} does not end in n={pcm.n}")
    return (word.astype(np.int64) @ pcm.bits.T.astype(np.int64) % 2).astype(np.uint8)


def encode(code: LinearCode, msg) -> np.ndarray:
    if code.gen is None:
        raise ValidationError(f"{code.name} has no generator matrix")
    msg = _as_bits(msg, "message")
    if msg.shape[-1] != code.k:
        raise ValidationError(f"message length {msg.shape[-1]} != k={code.k}")
    return (msg.astype(np.int64) @ code.gen.astype(np.int64) % 2).astype(np.uint8)


def with_generator(name: str, family: CodeFamily, pcm: ParityCheckMatrix) -> LinearCode:
    return LinearCode(name, family, pcm, systematic_generator(pcm))


# ---------------------------------------------------------------------- alist


def _ints(line: str, lineno: int) -> list[int]:
    try:
        return [int(tok) for tok in line.split()]
    except ValueError:
        raise AlistParseError(f"non-integer token in {line.strip()!r}", lineno) from None


def load_alist(text: str) -> ParityCheckMatrix:
    """Parse an alist document.

    Neighbour lists may be zero-padded up to the maximum degree; a zero
    anywhere before the last real entry is rejected.
    """
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines()) if ln.strip()]
    if len(lines) < 4:
        raise AlistParseError("truncated header", lines[-1][0] if lines else 1)

    def take(expected: int | None, what: str):
        if not lines:
            raise AlistParseError(f"unexpected end of file while reading {what}")
        lineno, ln = lines.pop(0)
        vals = _ints(ln, lineno)
        if expected is not None and len(vals) != expected:
            raise AlistParseError(f"{what}: expected {expected} values, got {len(vals)}", lineno)
        return lineno, vals

    lineno, (n, m) = take(2, "dimensions 'n m'")
    if n < 2 or m < 1:
        raise AlistParseError(f"invalid dimensions n={n}, m={m}", lineno)
    lineno, (max_col, max_row) = take(2, "maximum degrees")
    _, col_deg = take(n, "column degrees")
    _, row_deg = take(m, "row degrees")
    if max(col_deg) != max_col or max(row_deg) != max_row:
        raise AlistParseError("maximum degrees disagree with degree lists", lineno)
    if sum(col_deg) != sum(row_deg):
        raise AlistParseError("column and row degree totals differ", lineno)

    def neighbours(count: int, degs: list[int], limit: int, max_deg: int, what: str):
        out = []
        for idx in range(count):
            lineno, vals = take(None, f"{what} {idx + 1} neighbour list")
            deg = degs[idx]
            if len(vals) not in (deg, max_deg):
                raise AlistParseError(
                    f"{what} {idx + 1}: expected {deg} entries (or {max_deg} padded), got {len(vals)}",
                    lineno,
                )
            body, pad = vals[:deg], vals[deg:]
            if any(v == 0 for v in body):
                raise AlistParseError(f"{what} {idx + 1}: zero index inside neighbour list", lineno)
            if any(v != 0 for v in pad):
                raise AlistParseError(f"{what} {idx + 1}: more neighbours than its degree", lineno)
            if any(not 1 <= v <= limit for v in body):
                raise AlistParseError(f"{what} {idx + 1}: index out of range 1..{limit}", lineno)
            if len(set(body)) != len(body):
                raise AlistParseError(f"{what} {idx + 1}: repeated index", lineno)
            out.append((lineno, body))
        return out

    cols = neighbours(n, col_deg, m, max_col, "column")
    rows = neighbours(m, row_deg, n, max_row, "row")
    if lines:
        raise AlistParseError("trailing content after row lists", lines[0][0])

    bits = np.zeros((m, n), dtype=np.uint8)
    for c, (_, body) in enumerate(cols):
        bits[np.array(body) - 1, c] = 1
    for r, (lineno, body) in enumerate(rows):
        listed = np.zeros(n, dtype=np.uint8)
        listed[np.array(body, dtype=np.int64) - 1] = 1
        if not np.array_equal(listed, bits[r]):
            raise AlistParseError(f"row {r + 1} disagrees with the column lists", lineno)
    return ParityCheckMatrix(bits)


def write_alist(pcm: ParityCheckMatrix) -> str:
    bits = pcm.bits
    m, n = bits.shape
    col_deg = bits.sum(axis=0).astype(int)
    row_deg = bits.sum(axis=1).astype(int)
    max_col, max_row = int(col_deg.max()), int(row_deg.max())

    def padded(idx: np.ndarray, width: int) -> str:
        vals = [int(i) + 1 for i in idx] + [0] * (width - idx.size)
        return " ".join(map(str, vals))

    out = [f"{n} {m}", f"{max_col} {max_row}"]
    out.append(" ".join(map(str, col_deg)))
    out.append(" ".join(map(str, row_deg)))
    out += [padded(np.flatnonzero(bits[:, c]), max_col) for c in range(n)]
    out += [padded(np.flatnonzero(bits[r]), max_row) for r in range(m)]
    return "\n".join(out) + "\n"

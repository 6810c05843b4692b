"""Tanner-graph spectra and the similarity measures built on them."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, ValidationError
from .gf2 import ParityCheckMatrix

DEFAULT_K = 20
DEFAULT_BETA = 0.1
_BETA_SEARCH_ULPS = 64


class Metric(enum.Enum):
    ADJACENCY = "ADJACENCY"
    LAPLACIAN = "LAPLACIAN"
    DEGREE_WD = "DEGREE_WD"


@dataclass(frozen=True)
class SimilarityParams:
    beta: float = DEFAULT_BETA
    metric: Metric = Metric.ADJACENCY

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True, eq=False)
class SpectralSignature:
    """Fixed-length spectral descriptor of a code's Tanner graph.

    Adjacency signatures are ordered by decreasing magnitude; Laplacian
    signatures are ascending. Slots beyond the available eigenvalues are 0.
    """

    values: np.ndarray
    source_dims: tuple[int, int]
    metric: Metric = Metric.ADJACENCY

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size < 1 or not np.isfinite(vals).all():
            raise ValidationError("signature needs at least one finite value")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "source_dims", tuple(int(d) for d in self.source_dims))

    @property
    def k_used(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, SpectralSignature):
            return NotImplemented
        return (
            self.metric == other.metric
            and self.source_dims == other.source_dims
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        head = ", ".join(f"{v:.4g}" for v in self.values[:4])
        return f"SpectralSignature(K={self.k_used}, {self.metric.value}, [{head}, ...])"


def bipartite_adjacency(pcm: ParityCheckMatrix) -> np.ndarray:
    """``[[0, H^T], [H, 0]]``: variable nodes first, then check nodes."""
    m, n = pcm.bits.shape
    adj = np.zeros((n + m, n + m), dtype=np.uint8)
    adj[:n, n:] = pcm.bits.T
    adj[n:, :n] = pcm.bits
    return adj


def _round_robin(size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # each round pairs every index with a distinct partner; index == size is a bye
    players = list(range(size + (size % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a < size and b < size]
        p, q = (np.array(x, dtype=np.int64) for x in zip(*pairs))
        rounds.append((p, q))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.linalg.norm(off))


def symmetric_eigenvalues(mat, tol: float = 1e-10, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of one round act on disjoint index pairs and can be
    applied together. Iteration stops once the off-diagonal Frobenius norm
    is at most ``tol``.

    Returns the eigenvalues sorted in descending order.
    """
    a = np.array(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) > 1e-12:
        raise ValidationError("matrix is not symmetric within 1e-12")
    a = 0.5 * (a + a.T)
    d = a.shape[0]
    if d < 2:
        return np.diag(a).copy()

    rounds = _round_robin(d)
    for _ in range(max_sweeps):
        if _off_norm(a) <= tol:
            return np.sort(np.diag(a))[::-1]
        for p, q in rounds:
            apq = a[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            with np.errstate(over="ignore"):
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                # |theta| -> inf gives t -> 0: the pair is already numerically decoupled
                t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(1.0, theta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
    residual = _off_norm(a)
    if residual <= tol:
        return np.sort(np.diag(a))[::-1]
    raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual)


def _magnitude_order(eigs: np.ndarray, scale: float) -> np.ndarray:
    """Sort by decreasing |lambda|; near-equal magnitudes put positives first."""
    tol = 1e-9 * max(1.0, scale)
    order = sorted(eigs.tolist(), key=lambda v: -abs(v))
    out: list[float] = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and abs(order[i]) - abs(order[j]) <= tol:
            j += 1
        out.extend(sorted(order[i:j], reverse=True))
        i = j
    return np.array(out)


def _fit(values: np.ndarray, K: int) -> np.ndarray:
    out = np.zeros(K)
    take = min(K, values.size)
    out[:take] = values[:take]
    return out


def spectral_signature(pcm: ParityCheckMatrix, K: int = DEFAULT_K) -> SpectralSignature:
    if K < 1:
        raise ValidationError("K must be >= 1")
    adj = bipartite_adjacency(pcm).astype(float)
    eigs = symmetric_eigenvalues(adj)
    ordered = _magnitude_order(eigs, float(np.abs(eigs).max(initial=0.0)))
    return SpectralSignature(_fit(ordered, K), (pcm.n, pcm.k), Metric.ADJACENCY)


def spectral_distance(a: SpectralSignature, b: SpectralSignature) -> float:
    if a.k_used != b.k_used:
        raise ValidationError(f"signature lengths differ: {a.k_used} vs {b.k_used}")
    if a.metric != b.metric:
        raise ValidationError(f"cannot compare {a.metric.value} and {b.metric.value} signatures")
    return float(np.linalg.norm(a.values - b.values))


def spectral_similarity(d: float, params: SimilarityParams = SimilarityParams()) -> float:
    if d < 0:
        raise ValidationError("distance must be non-negative")
    return math.exp(-params.beta * d)


def calibrate_beta_median(distances: Sequence[float]) -> float:
    """``ln 2 / median`` of the strictly positive distances.

    The result is moved by a few ulps so that ``exp(-beta * median) == 0.5``
    holds exactly in floating point whenever some double achieves it. For
    some medians the rounded product ``beta * median`` skips every value
    whose exponential rounds to 0.5; the closest achievable beta (one ulp
    of 0.5 away) is returned then.
    """
    d = np.asarray(distances, dtype=float)
    positive = d[d > 0]
    if positive.size == 0:
        raise ValidationError("need at least one strictly positive distance")
    med = float(np.median(positive))
    beta0 = math.log(2.0) / med
    best, best_key = beta0, (abs(math.exp(-beta0 * med) - 0.5), 0)
    for direction in (math.inf, -math.inf):
        beta = beta0
        for step in range(1, _BETA_SEARCH_ULPS + 1):
            beta = float(np.nextafter(beta, direction))
            key = (abs(math.exp(-beta * med) - 0.5), step)
            if key < best_key:
                best, best_key = beta, key
    return best


def _edge_degree_lists(pcm: ParityCheckMatrix) -> tuple[np.ndarray, np.ndarray]:
    if pcm.nnz == 0:
        raise ValidationError("parity-check matrix has no edges")
    return pcm.bits.sum(axis=0).astype(float), pcm.bits.sum(axis=1).astype(float)


def degree_wd_distance(pcm_a: ParityCheckMatrix, pcm_b: ParityCheckMatrix) -> float:
    """Sum of 1-D Wasserstein distances between edge-perspective degree laws.

    A node of degree d carries weight d, so the weights give the fraction of
    edges attached to nodes of each degree. Variable and check sides are
    compared separately and summed.
    """
    from scipy.stats import wasserstein_distance

    va, ca = _edge_degree_lists(pcm_a)
    vb, cb = _edge_degree_lists(pcm_b)
    total = 0.0
    for u, v in ((va, vb), (ca, cb)):
        total += wasserstein_distance(u, v, u_weights=u, v_weights=v)
    return float(total)


def normalized_laplacian(pcm: ParityCheckMatrix) -> np.ndarray:
    adj = bipartite_adjacency(pcm).astype(float)
    deg = adj.sum(axis=1)
    if (deg == 0).any():
        raise ValidationError("Tanner graph has an isolated node (all-zero row or column)")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return np.eye(adj.shape[0]) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def laplacian_signature(pcm: ParityCheckMatrix, K: int = DEFAULT_K) -> SpectralSignature:
    if K < 1:
        raise ValidationError("K must be >= 1")
    eigs = np.sort(symmetric_eigenvalues(normalized_laplacian(pcm)))
    return SpectralSignature(_fit(eigs, K), (pcm.n, pcm.k), Metric.LAPLACIAN)


def pairwise_similarity(
    pcm_a: ParityCheckMatrix,
    pcm_b: ParityCheckMatrix,
    params: SimilarityParams = SimilarityParams(),
    K: int = DEFAULT_K,
) -> float:
    """Similarity of two codes under any of the three metrics."""
    if params.metric is Metric.DEGREE_WD:
        d = degree_wd_distance(pcm_a, pcm_b)
    elif params.metric is Metric.LAPLACIAN:
        d = spectral_distance(laplacian_signature(pcm_a, K), laplacian_signature(pcm_b, K))
    else:
        d = spectral_distance(spectral_signature(pcm_a, K), spectral_signature(pcm_b, K))
    return spectral_similarity(d, params)

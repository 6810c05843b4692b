"""Flooding sum-product belief propagation on the Tanner graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gf2 import ParityCheckMatrix, syndrome

LLR_CLAMP = 30.0


@dataclass(frozen=True)
class BpConfig:
    max_iters: int = 50
    early_stop: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass(frozen=True)
class BpResult:
    bits: np.ndarray
    converged: np.ndarray | bool
    iters_used: np.ndarray | int


def channel_llr(y, sigma) -> np.ndarray:
    """AWGN log-likelihood ratios ``2 y / sigma^2`` (positive favours bit 0)."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValidationError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    if sigma.ndim == 1 and y.ndim == 2:
        sigma = sigma[:, None]
    return 2.0 * y / sigma**2


def decode_batch(pcm: ParityCheckMatrix, llr, cfg: BpConfig = BpConfig()) -> BpResult:
    """Decode a ``(B, n)`` batch of LLR rows.

    Messages live on the edges of ``H`` as dense ``(B, m, n)`` arrays with
    zeros off the graph. Frames whose hard decision satisfies every check
    stop updating when ``early_stop`` is set.
    """
    llr = np.asarray(llr, dtype=float)
    if llr.ndim != 2 or llr.shape[1] != pcm.n:
        raise ValidationError(f"llr must have shape (B, {pcm.n}), got {llr.shape}")
    h = pcm.bits.astype(bool)
    bsz = llr.shape[0]
    prior = np.clip(llr, -LLR_CLAMP, LLR_CLAMP)
    c2v = np.zeros((bsz,) + h.shape)
    post = prior.copy()
    bits = (post < 0).astype(np.uint8)
    converged = np.zeros(bsz, dtype=bool)
    iters = np.zeros(bsz, dtype=np.int64)
    active = np.ones(bsz, dtype=bool)
    for it in range(1, cfg.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        c = c2v[idx]
        # variable-to-check: posterior minus the incoming message on the same edge
        v2c = np.where(h, post[idx][:, None, :] - c, 0.0)
        v2c = np.clip(v2c, -LLR_CLAMP, LLR_CLAMP)
        t = np.where(h, np.tanh(0.5 * v2c), 1.0)
        # extrinsic product; zero factors are handled by counting them
        zero = np.abs(t) < 1e-300
        t_safe = np.where(zero, 1.0, t)
        prod = np.prod(t_safe, axis=2, keepdims=True)
        nzero = zero.sum(axis=2, keepdims=True)
        ext = np.where(zero, np.where(nzero == 1, prod, 0.0), np.where(nzero == 0, prod / t_safe, 0.0))
        ext = np.clip(ext, -1.0 + 1e-15, 1.0 - 1e-15)
        c_new = np.where(h, np.clip(2.0 * np.arctanh(ext), -LLR_CLAMP, LLR_CLAMP), 0.0)
        c2v[idx] = c_new
        post[idx] = prior[idx] + c_new.sum(axis=1)
        bits[idx] = (post[idx] < 0).astype(np.uint8)
        iters[idx] = it
        ok = ~syndrome(pcm, bits[idx]).any(axis=1)
        converged[idx] = ok
        if cfg.early_stop:
            active[idx[ok]] = False
    return BpResult(bits, converged, iters)


def decode(pcm: ParityCheckMatrix, llr, cfg: BpConfig = BpConfig()) -> BpResult:
    """Single-frame decode; see :func:`decode_batch`."""
    llr = np.asarray(llr, dtype=float)
    if llr.ndim != 1:
        raise ValidationError("decode takes one LLR vector; use decode_batch for batches")
    res = decode_batch(pcm, llr[None, :], cfg)
    return BpResult(res.bits[0], bool(res.converged[0]), int(res.iters_used[0]))


def bp_decoder_fn(pcm: ParityCheckMatrix, sigma: float, cfg: BpConfig = BpConfig(), chunk: int = 2048):
    """``y -> x_hat`` callback for channel evaluation at a fixed noise level."""

    def run(y: np.ndarray) -> np.ndarray:
        llr = channel_llr(y, sigma)
        return np.concatenate([decode_batch(pcm, llr[i : i + chunk], cfg).bits for i in range(0, len(llr), chunk)])

    return run

"""BPSK over AWGN with Eb/N0 bookkeeping and Monte-Carlo BER/FER evaluation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .gf2 import LinearCode, encode

Decoder = Callable[[np.ndarray], np.ndarray]

CSV_COLUMNS = ("ebn0_db", "ber", "fer", "frames", "bit_errors", "seed")


@dataclass(frozen=True)
class ChannelConfig:
    ebn0_db: float
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.rate < 1.0:
            raise ValidationError(f"rate must lie in (0, 1), got {self.rate}")
        if not math.isfinite(self.ebn0_db):
            raise ValidationError("ebn0_db must be finite")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def sigma_from_ebn0(ebn0_db, rate):
    """Noise standard deviation for unit-energy BPSK: sigma^2 = 1 / (2 R Eb/N0)."""
    return np.sqrt(1.0 / (2.0 * rate * 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0)))


def noise_sigma(cfg: ChannelConfig) -> float:
    return float(sigma_from_ebn0(cfg.ebn0_db, cfg.rate))


def modulate_bpsk(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def hard_decision(y) -> np.ndarray:
    return (np.asarray(y) < 0).astype(np.uint8)


def transmit(cfg: ChannelConfig, x_s, rng: np.random.Generator) -> np.ndarray:
    x_s = np.asarray(x_s, dtype=float)
    return x_s + noise_sigma(cfg) * rng.standard_normal(x_s.shape)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; used for per-batch and per-step draws."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def q_function(t):
    from scipy.special import erfc

    return 0.5 * erfc(np.asarray(t, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class EvalPoint:
    ebn0_db: float
    ber: float
    fer: float
    frames: int
    bit_errors: int
    frame_errors: int
    seed: int

    @property
    def neg_ln_ber(self) -> float:
        return math.inf if self.ber == 0 else -math.log(self.ber)

    def ber_standard_error(self, n: int) -> float:
        bits = self.frames * n
        return math.sqrt(max(self.ber * (1 - self.ber), 1e-300) / bits)


def evaluate(
    cfgs: Sequence[ChannelConfig],
    code: LinearCode,
    decoder: Decoder,
    min_frames: int = 1000,
    min_errors: int = 100,
    *,
    batch_frames: int = 1000,
    max_frames: int = 1_000_000,
    random_codewords: bool = False,
) -> list[EvalPoint]:
    """Monte-Carlo BER/FER for each channel configuration.

    ``decoder`` maps a ``(frames, n)`` array of channel outputs to a
    ``(frames, n)`` array of bit decisions. Frames are drawn in batches;
    batch ``b`` of point ``p`` uses substream ``(seed, p, b)``, so results
    depend only on the seed and the batch size. Simulation stops once both
    ``min_frames`` frames and ``min_errors`` bit errors are reached, or at
    ``max_frames``.
    """
    if min_frames < 1:
        raise ValidationError("min_frames must be >= 1")
    if random_codewords and code.gen is None:
        raise ValidationError("random-codeword evaluation needs a generator matrix")
    n = code.n
    points = []
    for p, cfg in enumerate(cfgs):
        frames = bit_errors = frame_errors = 0
        b = 0
        while frames < max_frames and (frames < min_frames or bit_errors < min_errors):
            size = batch_frames if frames >= min_frames else min(batch_frames, min_frames - frames)
            size = min(size, max_frames - frames)
            rng = substream(cfg.seed, p, b)
            if random_codewords:
                msgs = rng.integers(0, 2, size=(size, code.k), dtype=np.uint8)
                x = encode(code, msgs)
            else:
                x = np.zeros((size, n), dtype=np.uint8)
            y = transmit(cfg, modulate_bpsk(x), rng)
            x_hat = np.asarray(decoder(y))
            if x_hat.shape != x.shape:
                raise ValidationError(
                    f"decoder returned shape {x_hat.shape}, expected {x.shape} "
                    f"(Eb/N0={cfg.ebn0_db} dB, batch {b})"
                )
            err = x_hat.astype(np.uint8) != x
            bit_errors += int(err.sum())
            frame_errors += int(err.any(axis=1).sum())
            frames += size
            b += 1
        points.append(
            EvalPoint(
                ebn0_db=cfg.ebn0_db,
                ber=bit_errors / (frames * n),
                fer=frame_errors / frames,
                frames=frames,
                bit_errors=bit_errors,
                frame_errors=frame_errors,
                seed=cfg.seed,
            )
        )
    return points


def fmt_float(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def points_to_csv(
    points: Iterable[EvalPoint], header: dict | None = None, neg_ln: bool = False
) -> str:
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}={value}\n")
    cols = list(CSV_COLUMNS) + (["neg_ln_ber"] if neg_ln else [])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for pt in points:
        row = asdict(pt)
        out = [fmt_float(row["ebn0_db"]), fmt_float(pt.ber), fmt_float(pt.fer), pt.frames, pt.bit_errors, pt.seed]
        if neg_ln:
            out.append(fmt_float(pt.neg_ln_ber))
        writer.writerow(out)
    return buf.getvalue()

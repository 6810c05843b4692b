"""Adam + cosine-schedule training on all-zero-codeword channel samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .channel import sigma_from_ebn0, substream
from .decoder import DecoderModel, bce_loss, code_context, tokenize
from .errors import DivergenceError, ValidationError
from .gf2 import LinearCode


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    steps_per_epoch: int = 100
    batch_size: int = 128
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    snr_low_db: float = 2.0
    snr_high_db: float = 7.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise ValidationError("epochs, steps_per_epoch and batch_size must be >= 1")
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError("need lr_start >= lr_end > 0")
        if self.snr_low_db > self.snr_high_db:
            raise ValidationError("snr_low_db must not exceed snr_high_db")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def cosine_lr(step: int, total: int, lr_start: float, lr_end: float) -> float:
    """Cosine decay hitting ``lr_start`` at step 0 and ``lr_end`` at step ``total-1``."""
    if total <= 1:
        return lr_start
    frac = step / (total - 1)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * frac))


@dataclass
class Batch:
    code: LinearCode
    y: np.ndarray
    tokens: torch.Tensor
    targets: torch.Tensor


def sample_batch(
    code: LinearCode, size: int, snr_low: float, snr_high: float, rng: np.random.Generator
) -> Batch:
    """All-zero codewords at per-sample Eb/N0 drawn uniformly from [snr_low, snr_high]."""
    snr = rng.uniform(snr_low, snr_high, size=size)
    sigma = sigma_from_ebn0(snr, code.rate)
    y = 1.0 + sigma[:, None] * rng.standard_normal((size, code.n))
    return Batch(
        code,
        y,
        torch.from_numpy(tokenize(code.pcm, y)),
        torch.from_numpy((y < 0).astype(np.float64)),
    )


def adam_loop(
    params: Sequence[torch.Tensor],
    batch_loss: Callable[[int], torch.Tensor],
    total_steps: int,
    lr_start: float,
    lr_end: float,
) -> list[float]:
    """Run Adam(0.9, 0.999, 1e-8) with the cosine schedule; returns per-step losses."""
    opt = torch.optim.Adam(params, lr=lr_start, betas=(0.9, 0.999), eps=1e-8)
    losses = []
    for step in range(total_steps):
        lr = cosine_lr(step, total_steps, lr_start, lr_end)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad(set_to_none=True)
        loss = batch_loss(step)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(step, value)
        loss.backward()
        opt.step()
        losses.append(value)
    return losses


def epoch_means(losses: list[float], steps_per_epoch: int) -> list[float]:
    return [float(np.mean(losses[i : i + steps_per_epoch])) for i in range(0, len(losses), steps_per_epoch)]


@dataclass
class TrainResult:
    model: DecoderModel
    epoch_loss: list[float]
    step_loss: list[float] = field(repr=False, default_factory=list)


def train(model: DecoderModel, codes: LinearCode | Sequence[LinearCode], cfg: TrainConfig) -> TrainResult:
    """Train every backbone parameter; the input model is left untouched.

    With several codes, step ``s`` draws its batch from ``codes[s % len(codes)]``.
    """
    if isinstance(codes, LinearCode):
        codes = [codes]
    model = model.clone()
    model.train()
    params = [p for p in model.parameters() if p.requires_grad]

    def batch_loss(step: int) -> torch.Tensor:
        code = codes[step % len(codes)]
        batch = sample_batch(code, cfg.batch_size, cfg.snr_low_db, cfg.snr_high_db, substream(cfg.seed, step))
        logits = model(batch.tokens, code_context(code.pcm))
        return bce_loss(logits, batch.targets)

    losses = adam_loop(params, batch_loss, cfg.total_steps, cfg.lr_start, cfg.lr_end)
    model.eval()
    return TrainResult(model, epoch_means(losses, cfg.steps_per_epoch), losses)

"""Toy ECCT-style transformer decoder with a code-aware binary attention mask.

This is a desk-scale proxy for a universal ECC transformer: the input is
the magnitude of the channel output plus the syndrome of its hard decision,
each token is a scalar times a learned type embedding, and code structure
enters only through the attention mask. There is no positional encoding,
so one set of weights runs on any code.

Everything runs in float64 so that masked and compacted models agree to
~1e-15 and finite-difference checks are meaningful.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import FormatError, NonFiniteError, ValidationError
from .gf2 import ParityCheckMatrix, syndrome
from .masks import DecoderArchitecture, StructuredMask

DTYPE = torch.float64
CHECKPOINT_VERSION = 1
LN_EPS = 1e-5
PROJECTIONS = ("q", "k", "v", "o")


def build_attention_mask(pcm: ParityCheckMatrix) -> np.ndarray:
    """Boolean ``(2n-k) x (2n-k)`` allow-matrix over [variable | check] tokens.

    Two tokens may attend to each other when they are the same node, a
    variable and a check joined by an edge, two variables sharing a check,
    or two checks sharing a variable.
    """
    h = pcm.bits.astype(np.int64)
    n = pcm.n
    t = n + pcm.rows
    allow = np.zeros((t, t), dtype=bool)
    allow[:n, :n] = (h.T @ h) > 0
    allow[n:, n:] = (h @ h.T) > 0
    allow[:n, n:] = h.T > 0
    allow[n:, :n] = h > 0
    np.fill_diagonal(allow, True)
    return allow


@dataclass(frozen=True, eq=False)
class CodeContext:
    pcm: ParityCheckMatrix
    allow: torch.Tensor

    @property
    def n(self) -> int:
        return self.pcm.n

    @property
    def seq_len(self) -> int:
        return self.pcm.n + self.pcm.rows


@lru_cache(maxsize=256)
def code_context(pcm: ParityCheckMatrix) -> CodeContext:
    return CodeContext(pcm, torch.from_numpy(build_attention_mask(pcm)))


def tokenize(pcm: ParityCheckMatrix, y) -> np.ndarray:
    """``[|y_1|..|y_n|, s_1..s_{n-k}]`` with the syndrome mapped 0 -> +1, 1 -> -1."""
    y = np.asarray(y, dtype=float)
    s = syndrome(pcm, (y < 0).astype(np.uint8))
    return np.concatenate([np.abs(y), 1.0 - 2.0 * s], axis=-1)


def decode_bits(y, logits) -> np.ndarray:
    """Flip the hard decision wherever the model predicts a sign flip."""
    y = np.asarray(y)
    flips = np.asarray(logits) > 0
    return ((y < 0) ^ flips).astype(np.uint8)


def bce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def per_sample_bce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    loss = F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype), reduction="none")
    return loss.mean(dim=-1)


def _param(shape, gen: torch.Generator | None, scale: float) -> nn.Parameter:
    if gen is None or scale == 0.0:
        return nn.Parameter(torch.zeros(shape, dtype=DTYPE))
    return nn.Parameter(torch.randn(shape, generator=gen, dtype=DTYPE) * scale)


class Block(nn.Module):
    """Pre-layernorm transformer block whose heads and channels can be gated."""

    def __init__(self, d_model: int, heads: int, head_dim: int, d_ffn: int, gen=None):
        super().__init__()
        self.heads = heads
        self.head_dim = head_dim
        inner = heads * head_dim
        self.ln1_scale = nn.Parameter(torch.ones(d_model, dtype=DTYPE))
        self.ln1_offset = nn.Parameter(torch.zeros(d_model, dtype=DTYPE))
        self.w_q = _param((inner, d_model), gen, d_model**-0.5)
        self.w_k = _param((inner, d_model), gen, d_model**-0.5)
        self.w_v = _param((inner, d_model), gen, d_model**-0.5)
        self.w_o = _param((d_model, inner), gen, max(inner, 1) ** -0.5)
        self.ln2_scale = nn.Parameter(torch.ones(d_model, dtype=DTYPE))
        self.ln2_offset = nn.Parameter(torch.zeros(d_model, dtype=DTYPE))
        self.ffn_in = _param((d_ffn, d_model), gen, d_model**-0.5)
        self.ffn_in_bias = nn.Parameter(torch.zeros(d_ffn, dtype=DTYPE))
        self.ffn_out = _param((d_model, d_ffn), gen, max(d_ffn, 1) ** -0.5)

    @property
    def d_ffn(self) -> int:
        return self.ffn_in.shape[0]

    def weight(self, kind: str, deltas: dict | None) -> torch.Tensor:
        w = getattr(self, f"w_{kind}")
        if deltas and kind in deltas:
            w = w + deltas[kind]
        return w

    def forward(self, x, allow, head_gate, ffn_gate, deltas=None):
        bsz, t, d = x.shape
        if self.heads:
            h = F.layer_norm(x, (d,), self.ln1_scale, self.ln1_offset, LN_EPS)

            def split(w):
                return (h @ w.T).view(bsz, t, self.heads, self.head_dim).transpose(1, 2)

            q = split(self.weight("q", deltas))
            k = split(self.weight("k", deltas))
            v = split(self.weight("v", deltas))
            scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
            scores = scores.masked_fill(~allow, float("-inf"))
            ctx = torch.softmax(scores, dim=-1) @ v
            if head_gate is not None:
                ctx = ctx * head_gate.reshape(-1, self.heads, 1, 1)
            ctx = ctx.transpose(1, 2).reshape(bsz, t, self.heads * self.head_dim)
            x = x + ctx @ self.weight("o", deltas).T
        if self.d_ffn:
            h = F.layer_norm(x, (d,), self.ln2_scale, self.ln2_offset, LN_EPS)
            act = F.gelu(h @ self.ffn_in.T + self.ffn_in_bias)
            if ffn_gate is not None:
                act = act * ffn_gate.reshape(-1, 1, self.d_ffn)
            x = x + act @ self.ffn_out.T
        return x


class DecoderModel(nn.Module):
    """Backbone weights plus the bookkeeping needed for masking and compaction.

    ``head_ids[l]`` / ``ffn_ids[l]`` list which units of the nominal
    architecture ``arch`` physically remain in layer ``l``; they are the full
    ranges until :func:`sap_ecc.pruning.compact` removes units.
    """

    def __init__(self, arch: DecoderArchitecture, seed: int | None = 0, layout=None):
        super().__init__()
        self.arch = arch
        if layout is None:
            layout = [
                (np.arange(arch.heads_per_layer), np.arange(arch.d_ffn)) for _ in range(arch.layers)
            ]
        if len(layout) != arch.layers:
            raise ValidationError("layout must have one entry per layer")
        self.head_ids = [np.asarray(h, dtype=np.int64) for h, _ in layout]
        self.ffn_ids = [np.asarray(f, dtype=np.int64) for _, f in layout]
        gen = None
        if seed is not None:
            gen = torch.Generator().manual_seed(int(seed))
        d = arch.d_model
        self.type_embed = _param((2, d), gen, 1.0)
        self.blocks = nn.ModuleList(
            Block(d, len(h), arch.head_dim, len(f), gen) for h, f in zip(self.head_ids, self.ffn_ids)
        )
        self.final_scale = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.final_offset = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.out_w = _param((d,), gen, d**-0.5)
        self.out_b = nn.Parameter(torch.zeros(1, dtype=DTYPE))
        self.active_mask: StructuredMask | None = None
        self.adapters = None

    # ----------------------------------------------------------- structure

    @property
    def is_compacted(self) -> bool:
        return any(
            len(h) != self.arch.heads_per_layer or len(f) != self.arch.d_ffn
            for h, f in zip(self.head_ids, self.ffn_ids)
        )

    def layout(self):
        return [(h.copy(), f.copy()) for h, f in zip(self.head_ids, self.ffn_ids)]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def backbone_hash(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in self.state_dict().items():
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().numpy().astype("<f8").tobytes())
        return digest.hexdigest()

    def clone(self) -> "DecoderModel":
        return copy.deepcopy(self)

    def mask_gates(self) -> list[tuple[torch.Tensor | None, torch.Tensor | None]]:
        if self.active_mask is None:
            return [(None, None)] * self.arch.layers
        out = []
        for l, (h, f) in enumerate(zip(self.head_ids, self.ffn_ids)):
            hg = torch.as_tensor(self.active_mask.head_bits[l][h], dtype=DTYPE)
            fg = torch.as_tensor(self.active_mask.ffn_bits[l][f], dtype=DTYPE)
            out.append((hg, fg))
        return out

    # ------------------------------------------------------------- forward

    def embed(self, tokens: torch.Tensor, n: int) -> torch.Tensor:
        kinds = torch.zeros(tokens.shape[-1], dtype=torch.long)
        kinds[n:] = 1
        return tokens.unsqueeze(-1) * self.type_embed[kinds]

    def forward(self, tokens, ctx: CodeContext, gates=None) -> torch.Tensor:
        """Per-bit logits for a batch of token rows.

        ``gates`` optionally supplies extra multiplicative gates per layer as
        ``(head_gate, ffn_gate)`` pairs with a leading batch dimension; they
        multiply on top of the active mask.
        """
        tokens = torch.as_tensor(tokens, dtype=DTYPE)
        squeeze = tokens.dim() == 1
        if squeeze:
            tokens = tokens.unsqueeze(0)
        if tokens.shape[-1] != ctx.seq_len:
            raise ValidationError(f"expected {ctx.seq_len} tokens, got {tokens.shape[-1]}")
        x = self.embed(tokens, ctx.n)
        for l, (block, (hg, fg)) in enumerate(zip(self.blocks, self.mask_gates())):
            if gates is not None:
                ghead, gffn = gates[l]
                hg = ghead if hg is None else ghead * hg
                fg = gffn if fg is None else gffn * fg
            deltas = self.adapters.deltas(l) if self.adapters is not None else None
            x = block(x, ctx.allow, hg, fg, deltas)
        x = F.layer_norm(x[:, : ctx.n], (self.arch.d_model,), self.final_scale, self.final_offset, LN_EPS)
        logits = x @ self.out_w + self.out_b
        if not torch.isfinite(logits).all():
            raise NonFiniteError("non-finite activations in decoder forward pass")
        return logits[0] if squeeze else logits

    def logits_for(self, pcm: ParityCheckMatrix, y) -> np.ndarray:
        with torch.no_grad():
            return self(tokenize(pcm, y), code_context(pcm)).numpy()

    def decoder_fn(self, pcm: ParityCheckMatrix, chunk: int = 4096):
        """Adapter to the ``y -> x_hat`` batch callback used by channel evaluation."""

        def run(y: np.ndarray) -> np.ndarray:
            parts = [decode_bits(y[i : i + chunk], self.logits_for(pcm, y[i : i + chunk])) for i in range(0, len(y), chunk)]
            return np.concatenate(parts, axis=0)

        return run


def forward(model: DecoderModel, pcm: ParityCheckMatrix, tokens) -> torch.Tensor:
    return model(tokens, code_context(pcm))


def loss_and_grads(model: DecoderModel, pcm: ParityCheckMatrix, y, targets=None):
    """BCE loss of a batch and its gradient for every trainable tensor.

    ``targets`` default to the flip indicators of an all-zero transmission.
    """
    y = np.asarray(y, dtype=float)
    if targets is None:
        targets = (y < 0).astype(float)
    params = {name: p for name, p in model.named_parameters() if p.requires_grad}
    logits = model(tokenize(pcm, y), code_context(pcm))
    loss = bce_loss(logits, torch.as_tensor(targets))
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    out = {}
    for (name, p), g in zip(params.items(), grads):
        out[name] = torch.zeros_like(p) if g is None else g
    return float(loss.detach()), out


# ----------------------------------------------------------------- storage


def _encode_tensor(t: torch.Tensor) -> dict:
    arr = t.detach().cpu().numpy().astype("<f8")
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_tensor(d: dict) -> torch.Tensor:
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype="<f8").reshape(d["shape"])
    return torch.from_numpy(arr.astype(np.float64))


def checkpoint_dict(model: DecoderModel) -> dict:
    return {
        "format": "sap-ecc-decoder",
        "version": CHECKPOINT_VERSION,
        "arch": model.arch.to_dict(),
        "layers": [
            {"head_ids": h.tolist(), "ffn_ids": f.tolist()} for h, f in zip(model.head_ids, model.ffn_ids)
        ],
        "active_mask": None if model.active_mask is None else model.active_mask.to_dict(),
        "tensors": {name: _encode_tensor(t) for name, t in model.state_dict().items()},
    }


def model_from_dict(d: dict) -> DecoderModel:
    if d.get("format") != "sap-ecc-decoder":
        raise FormatError("not a decoder checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {d.get('version')!r}, expected {CHECKPOINT_VERSION}")
    arch = DecoderArchitecture.from_dict(d["arch"])
    layout = [(np.array(l["head_ids"], dtype=np.int64), np.array(l["ffn_ids"], dtype=np.int64)) for l in d["layers"]]
    model = DecoderModel(arch, seed=None, layout=layout)
    state = {name: _decode_tensor(t) for name, t in d["tensors"].items()}
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise FormatError(f"checkpoint tensors do not match the architecture: {exc}") from None
    if d.get("active_mask") is not None:
        model.active_mask = StructuredMask.from_dict(d["active_mask"])
    return model


def save_checkpoint(model: DecoderModel, path) -> None:
    Path(path).write_text(json.dumps(checkpoint_dict(model), sort_keys=True))


def load_checkpoint(path) -> DecoderModel:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"corrupt checkpoint {path}: {exc}") from None

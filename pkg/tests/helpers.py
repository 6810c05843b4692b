"""Independent oracles shared by the unit and acceptance tests."""

import numpy as np
import torch

from sap_ecc.decoder import loss_and_grads


def finite_difference_check(model, pcm, y, step=1e-4):
    """Max relative error between autograd and central differences over every parameter.

    Relative error is ``|g - fd| / max(|g|, |fd|)`` per coordinate (0 when both vanish).
    """
    _, grads = loss_and_grads(model, pcm, y)
    worst, count = 0.0, 0
    for name, p in model.named_parameters():
        # writes through .data bypass autograd
        flat = p.data.view(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + step
            up, _ = loss_and_grads(model, pcm, y)
            flat[i] = old - step
            down, _ = loss_and_grads(model, pcm, y)
            flat[i] = old
            fd = (up - down) / (2 * step)
            den = max(abs(g[i].item()), abs(fd))
            if den > 0:
                worst = max(worst, abs(g[i].item() - fd) / den)
            count += 1
    return worst, count


def perturb(model, scale=0.1, seed=0):
    """Break the symmetric initial values (unit scales, zero offsets) before checks."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


def noisy_frames(n, frames, sigma=0.8, seed=0):
    return np.random.default_rng(seed).normal(1.0, sigma, (frames, n))


def random_pcm(rng, max_n=9):
    from sap_ecc.gf2 import ParityCheckMatrix

    n = int(rng.integers(3, max_n + 1))
    m = int(rng.integers(1, n))
    return ParityCheckMatrix(rng.integers(0, 2, (m, n)).astype(np.uint8))


def random_mask(rng, arch):
    from sap_ecc.masks import StructuredMask

    return StructuredMask(
        arch,
        rng.integers(0, 2, (arch.layers, arch.heads_per_layer)),
        rng.integers(0, 2, (arch.layers, arch.d_ffn)),
    )


def random_library(seed, arch, size=None, tau=0.5, K=6):
    """Library over random small PCMs plus a fresh query PCM drawn from the same law."""
    from sap_ecc.library import MaskLibrary

    rng = np.random.default_rng(seed)
    lib = MaskLibrary(arch, K=K, tau=tau)
    for i in range(int(rng.integers(1, 6)) if size is None else size):
        lib = lib.add(random_pcm(rng), random_mask(rng, arch), f"r{i}")
    return lib, random_pcm(rng), rng


def check_select_or_create(lib, pcm, derive):
    """Assert the reuse rule, one-entry growth and re-query behavior; return the decision."""
    from sap_ecc.library import Decision, retrieve, select_or_create

    hit = retrieve(lib, lib.signature_of(pcm))
    sel = select_or_create(lib, pcm, derive)
    assert (sel.decision is Decision.REUSED) == (hit.similarity >= lib.tau)
    if sel.decision is Decision.REUSED:
        assert sel.library is lib and sel.mask == lib.entries[hit.index].mask
    else:
        assert len(sel.library) == len(lib) + 1
        again = select_or_create(sel.library, pcm, derive)
        assert again.decision is Decision.REUSED and again.distance == 0.0
        assert len(again.library) == len(sel.library)
    return sel.decision

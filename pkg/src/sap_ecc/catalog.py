"""Built-in desk-scale code catalog.

The parity-check matrices ship as alist files under ``sap_ecc/data`` and
are listed in ``catalog.json``. The constructions below regenerate those
files bit-for-bit::

    python -m sap_ecc.catalog --rebuild

Constructions
-------------
* Hamming(7,4): columns are the binary expansions of 1..7.
* BCH(n,k): cyclic codes from tabulated generator polynomials; the PCM
  rows are cyclic shifts of the reciprocal check polynomial.
* LDPC (3,6)-regular: configuration model over edge sockets with a fixed
  seed, resampled until simple and full rank.
* LIFT2 variants: every one of an LDPC PCM becomes a 2x2 identity or swap
  block (seeded), every zero a 2x2 zero block.
* Polar(N,K): rows of the Kronecker power of [[1,0],[1,1]] that are frozen
  under the Bhattacharyya recursion with design parameter 0.5; the PCM is
  the transpose of the frozen columns.
"""

from __future__ import annotations

import argparse
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .gf2 import (
    CodeFamily,
    LinearCode,
    ParityCheckMatrix,
    gf2_rank,
    load_alist,
    with_generator,
    write_alist,
)

CATALOG_VERSION = 1

# generator polynomials, bit i = coefficient of x^i
BCH_GENERATORS = {
    (15, 11): 0b10011,
    (15, 7): 0b111010001,
    (15, 5): 0b10100110111,
    (31, 21): 0o3551,
    (31, 16): 0o107657,
}


def hamming_pcm(r: int = 3) -> np.ndarray:
    n = 2**r - 1
    return np.array([[(c >> i) & 1 for c in range(1, n + 1)] for i in range(r)], dtype=np.uint8)


def _poly_divmod(num: int, den: int) -> tuple[int, int]:
    q = 0
    dd = den.bit_length()
    while num.bit_length() >= dd:
        shift = num.bit_length() - dd
        q |= 1 << shift
        num ^= den << shift
    return q, num


def cyclic_pcm(n: int, g: int) -> np.ndarray:
    h, rem = _poly_divmod((1 << n) | 1, g)
    if rem:
        raise ValidationError(f"generator polynomial {g:#b} does not divide x^{n}+1")
    k = h.bit_length() - 1
    # reciprocal of h: coefficient of x^j is h_{k-j}
    h_rev = [(h >> (k - j)) & 1 for j in range(k + 1)]
    pcm = np.zeros((n - k, n), dtype=np.uint8)
    for i in range(n - k):
        pcm[i, i : i + k + 1] = h_rev
    return pcm


def cyclic_generator(n: int, g: int) -> np.ndarray:
    deg = g.bit_length() - 1
    k = n - deg
    gen = np.zeros((k, n), dtype=np.uint8)
    coeffs = [(g >> j) & 1 for j in range(deg + 1)]
    for i in range(k):
        gen[i, i : i + deg + 1] = coeffs
    return gen


def regular_ldpc_pcm(n: int, dv: int = 3, dc: int = 6, seed: int = 0) -> np.ndarray:
    if (n * dv) % dc:
        raise ValidationError("n*dv must be divisible by dc")
    m = n * dv // dc
    rng = np.random.default_rng(seed)
    for _ in range(10_000):
        sockets = np.repeat(np.arange(n), dv)
        rng.shuffle(sockets)
        pcm = np.zeros((m, n), dtype=np.uint8)
        rows = np.repeat(np.arange(m), dc)
        np.add.at(pcm, (rows, sockets), 1)
        if pcm.max() > 1:
            continue
        if gf2_rank(pcm) == m:
            return pcm
    raise ValidationError(f"no simple full-rank ({dv},{dc}) LDPC found for n={n}")


def lift2_pcm(base: np.ndarray, seed: int = 0) -> np.ndarray:
    m, n = base.shape
    rng = np.random.default_rng(seed)
    eye = np.eye(2, dtype=np.uint8)
    swap = eye[::-1]
    for _ in range(10_000):
        out = np.zeros((2 * m, 2 * n), dtype=np.uint8)
        for r, c in zip(*np.nonzero(base)):
            out[2 * r : 2 * r + 2, 2 * c : 2 * c + 2] = swap if rng.integers(2) else eye
        if gf2_rank(out) == 2 * m:
            return out
    raise ValidationError("no full-rank 2-lift found")


def polar_pcm(n: int, k: int, design_z: float = 0.5) -> np.ndarray:
    m = int(round(np.log2(n)))
    if 2**m != n or not 0 < k < n:
        raise ValidationError(f"polar code needs n = 2^m and 0 < k < n, got ({n},{k})")
    kron = np.array([[1]], dtype=np.uint8)
    base = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    for _ in range(m):
        kron = np.kron(kron, base) % 2
    z = np.array([design_z])
    for _ in range(m):
        nxt = np.empty(2 * z.size)
        nxt[0::2] = 2 * z - z * z
        nxt[1::2] = z * z
        z = nxt
    # larger Bhattacharyya parameter = less reliable; stable sort keeps ties by index
    frozen = np.sort(np.argsort(-z, kind="stable")[: n - k])
    return np.ascontiguousarray(kron[:, frozen].T)


def _constructions() -> dict[str, tuple[CodeFamily, np.ndarray, str]]:
    out: dict[str, tuple[CodeFamily, np.ndarray, str]] = {
        "HAMMING_7_4": (CodeFamily.HAMMING, hamming_pcm(3), "binary expansions of 1..7"),
    }
    for (n, k), g in BCH_GENERATORS.items():
        out[f"BCH_{n}_{k}"] = (CodeFamily.BCH, cyclic_pcm(n, g), f"cyclic, g={g:#o}")
    for n, seed in ((12, 1), (24, 2), (48, 3)):
        base = regular_ldpc_pcm(n, seed=seed)
        out[f"LDPC_{n}_{n // 2}"] = (CodeFamily.LDPC, base, f"(3,6) configuration model, seed={seed}")
        out[f"LDPC_{n}_{n // 2}_LIFT2"] = (
            CodeFamily.LDPC,
            lift2_pcm(base, seed=seed),
            f"2-lift of LDPC_{n}_{n // 2}, seed={seed}",
        )
    out["LDPC_24_12_B"] = (
        CodeFamily.LDPC,
        regular_ldpc_pcm(24, seed=17),
        "(3,6) configuration model, seed=17",
    )
    for n, k in ((16, 8), (32, 16)):
        out[f"POLAR_{n}_{k}"] = (CodeFamily.POLAR, polar_pcm(n, k), "Bhattacharyya z=0.5 frozen set")
    return out


def rebuild(data_dir: Path) -> None:
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": CATALOG_VERSION, "codes": []}
    for name, (family, pcm, how) in _constructions().items():
        fname = f"{name.lower()}.alist"
        (data_dir / fname).write_text(write_alist(ParityCheckMatrix(pcm)))
        manifest["codes"].append(
            {"name": name, "family": family.value, "file": fname, "construction": how}
        )
    (data_dir / "catalog.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _data_root():
    return resources.files("sap_ecc") / "data"


@lru_cache(maxsize=1)
def _manifest() -> dict:
    manifest = json.loads((_data_root() / "catalog.json").read_text())
    if manifest.get("version") != CATALOG_VERSION:
        raise ValidationError(
            f"catalog version {manifest.get('version')} != expected {CATALOG_VERSION}"
        )
    return {entry["name"]: entry for entry in manifest["codes"]}


def catalog_names() -> list[str]:
    return list(_manifest())


@lru_cache(maxsize=None)
def catalog_get(name: str) -> LinearCode:
    entries = _manifest()
    if name not in entries:
        raise ValidationError(f"unknown code {name!r}; catalog has: {', '.join(entries)}")
    entry = entries[name]
    pcm = load_alist((_data_root() / entry["file"]).read_text())
    return with_generator(name, CodeFamily(entry["family"]), pcm)


def resolve_code(spec: str) -> LinearCode:
    """Catalog name, or a path to an alist file."""
    path = Path(spec)
    if path.suffix == ".alist" or path.exists():
        pcm = load_alist(path.read_text())
        return with_generator(path.stem, CodeFamily.CUSTOM, pcm)
    return catalog_get(spec)


def _main() -> None:
    parser = argparse.ArgumentParser(description="regenerate the embedded code catalog")
    parser.add_argument("--rebuild", action="store_true")
    parser.add_argument("--data-dir", type=Path, default=Path(__file__).parent / "data")
    args = parser.parse_args()
    if args.rebuild:
        rebuild(args.data_dir)
    for name in _constructions():
        print(name)


if __name__ == "__main__":
    _main()

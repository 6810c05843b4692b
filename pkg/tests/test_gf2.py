import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sap_ecc.catalog import catalog_get, catalog_names
from sap_ecc.errors import AlistParseError, RankDeficiencyError, ValidationError
from sap_ecc.gf2 import (
    CodeFamily,
    LinearCode,
    ParityCheckMatrix,
    encode,
    gf2_rank,
    inverse_permutation,
    load_alist,
    permute_columns,
    rref_gf2,
    syndrome,
    systematic_generator,
    with_generator,
    write_alist,
)

HAMMING_ALIST = """7 3
3 4
1 1 2 1 2 2 3
4 4 4
1 0 0
2 0 0
1 2 0
3 0 0
1 3 0
2 3 0
1 2 3
1 3 5 7
2 3 6 7
4 5 6 7
"""


def pcm(rows):
    return ParityCheckMatrix.from_rows(rows)


@st.composite
def random_pcms(draw, max_n=10):
    n = draw(st.integers(2, max_n))
    m = draw(st.integers(1, n - 1))
    bits = draw(st.lists(st.lists(st.integers(0, 1), min_size=n, max_size=n), min_size=m, max_size=m))
    return pcm(bits)


def all_words(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def null_space(h):
    words = all_words(h.n)
    return {w.tobytes() for w in words[~syndrome(h, words).any(axis=1)]}


class TestParityCheckMatrix:
    def test_shape_rules(self):
        with pytest.raises(ValidationError):
            pcm([[1, 1], [1, 0]])
        with pytest.raises(ValidationError):
            pcm([[1]])
        with pytest.raises(ValidationError):
            pcm([[0, 2, 1]])

    def test_read_only(self):
        h = pcm([[1, 1, 0]])
        with pytest.raises(ValueError):
            h.bits[0, 0] = 0

    def test_dims(self):
        h = catalog_get("HAMMING_7_4").pcm
        assert (h.rows, h.n, h.k, h.nnz) == (3, 7, 4, 12)


class TestLinearCode:
    def test_rejects_bad_generator(self):
        with pytest.raises(ValidationError):
            LinearCode("X", CodeFamily.CUSTOM, pcm([[1, 1, 0]]), np.array([[1, 0, 0]]))

    def test_rate(self):
        code = with_generator("REP", CodeFamily.CUSTOM, pcm([[1, 1]]))
        assert code.rate == 0.5


class TestRref:
    def test_hand_example(self):
        assert rref_gf2(pcm([[1, 1, 0], [1, 0, 1]])) == pcm([[1, 0, 1], [0, 1, 1]])

    def test_identity_fixed_point(self):
        h = pcm([[1, 0, 0, 1], [0, 1, 0, 1], [0, 0, 1, 0]])
        assert rref_gf2(h) == h

    def test_duplicate_row_cancels(self):
        assert rref_gf2(pcm([[1, 1, 0], [1, 1, 0]])) == pcm([[1, 1, 0], [0, 0, 0]])

    @settings(max_examples=60, deadline=None)
    @given(random_pcms())
    def test_null_space_preserved(self, h):
        assert null_space(rref_gf2(h)) == null_space(h)

    @settings(max_examples=60, deadline=None)
    @given(random_pcms())
    def test_is_reduced(self, h):
        r = rref_gf2(h).bits
        lead = []
        for row in r:
            nz = np.flatnonzero(row)
            lead.append(nz[0] if nz.size else None)
        pivots = [p for p in lead if p is not None]
        assert pivots == sorted(pivots)
        assert lead[: len(pivots)] == pivots  # zero rows at the bottom
        for i, p in enumerate(pivots):
            assert r[:, p].sum() == 1 and r[i, p] == 1

    def test_exhaustive_catalog_small(self):
        for name in ("HAMMING_7_4", "BCH_15_7", "LDPC_12_6", "POLAR_16_8"):
            h = catalog_get(name).pcm
            assert null_space(rref_gf2(h)) == null_space(h)


class TestPermutation:
    def test_identity(self):
        h = catalog_get("HAMMING_7_4").pcm
        assert permute_columns(h, range(7)) == h

    def test_swap(self):
        assert permute_columns(pcm([[1, 0, 0], [0, 1, 0]]), [1, 0, 2]) == pcm([[0, 1, 0], [1, 0, 0]])

    def test_rejects_repeat(self):
        with pytest.raises(ValidationError):
            permute_columns(pcm([[1, 0, 1]]), [0, 0, 1])

    @settings(max_examples=40, deadline=None)
    @given(random_pcms(), st.randoms())
    def test_inverse_and_syndrome(self, h, rnd):
        perm = list(range(h.n))
        rnd.shuffle(perm)
        hp = permute_columns(h, perm)
        assert permute_columns(hp, inverse_permutation(perm)) == h
        x = np.array([rnd.randint(0, 1) for _ in range(h.n)], dtype=np.uint8)
        xp = np.zeros_like(x)
        xp[perm] = x
        assert np.array_equal(syndrome(hp, xp), syndrome(h, x))


class TestGenerator:
    def test_hamming_codewords(self):
        code = catalog_get("HAMMING_7_4")
        words = encode(code, all_words(4))
        assert len({w.tobytes() for w in words}) == 16
        assert not syndrome(code.pcm, words).any()

    def test_repetition(self):
        assert systematic_generator(pcm([[1, 1]])).tolist() == [[1, 1]]

    def test_rank_deficiency(self):
        with pytest.raises(RankDeficiencyError) as err:
            systematic_generator(pcm([[1, 1, 0, 0], [1, 1, 0, 0]]))
        assert err.value.rank == 1

    @settings(max_examples=40, deadline=None)
    @given(random_pcms(max_n=12))
    def test_full_rank_generator(self, h):
        if gf2_rank(h.bits) < h.rows:
            return
        g = systematic_generator(h)
        assert g.shape == (h.k, h.n) and gf2_rank(g) == h.k
        assert not (g.astype(int) @ h.bits.T.astype(int) % 2).any()

    def test_encode_zero_and_row(self):
        code = catalog_get("HAMMING_7_4")
        assert not encode(code, [0, 0, 0, 0]).any()
        assert np.array_equal(encode(code, [1, 0, 0, 0]), code.gen[0])
        with pytest.raises(ValidationError):
            encode(code, [1, 0, 0])

    def test_catalog_all_messages(self):
        for name in catalog_names():
            code = catalog_get(name)
            if code.k <= 12:
                assert not syndrome(code.pcm, encode(code, all_words(code.k))).any(), name


class TestSyndrome:
    def test_single_flip_is_column(self):
        h = catalog_get("HAMMING_7_4").pcm
        for j in range(7):
            e = np.zeros(7, dtype=np.uint8)
            e[j] = 1
            assert np.array_equal(syndrome(h, e), h.bits[:, j])

    def test_all_ones(self):
        assert syndrome(pcm([[1, 1, 0], [0, 1, 1]]), [1, 1, 1]).tolist() == [0, 0]

    def test_length(self):
        with pytest.raises(ValidationError):
            syndrome(pcm([[1, 1, 0]]), [1, 1])


class TestAlist:
    def test_small(self):
        doc = "3 2\n2 2\n1 2 1\n2 2\n1 0\n1 2\n2 0\n1 2\n2 3\n"
        h = load_alist(doc)
        assert h == pcm([[1, 1, 0], [0, 1, 1]]) and h.nnz == 4

    def test_hamming_round_trip(self):
        h = load_alist(HAMMING_ALIST)
        assert h.n == 7 and h.rows == 3
        assert write_alist(h).split() == HAMMING_ALIST.split()

    def test_zero_in_body(self):
        bad = HAMMING_ALIST.replace("1 3 5 7", "1 0 5 7")
        with pytest.raises(AlistParseError) as err:
            load_alist(bad)
        assert err.value.line == 12

    def test_out_of_range(self):
        with pytest.raises(AlistParseError):
            load_alist(HAMMING_ALIST.replace("4 5 6 7", "4 5 6 9"))

    def test_inconsistent_lists(self):
        bad = HAMMING_ALIST.replace("1 3 5 7\n2 3 6 7", "2 3 5 7\n1 3 6 7")
        with pytest.raises(AlistParseError, match="disagrees"):
            load_alist(bad)

    def test_header(self):
        with pytest.raises(AlistParseError):
            load_alist("7\n")

    def test_catalog_round_trip(self):
        for name in catalog_names():
            h = catalog_get(name).pcm
            assert load_alist(write_alist(h)) == h, name

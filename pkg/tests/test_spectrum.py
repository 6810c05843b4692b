import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sap_ecc.catalog import catalog_get, catalog_names
from sap_ecc.errors import ConvergenceError, ValidationError
from sap_ecc.gf2 import ParityCheckMatrix, permute_columns, rref_gf2
from sap_ecc.spectrum import (
    Metric,
    SimilarityParams,
    SpectralSignature,
    bipartite_adjacency,
    calibrate_beta_median,
    degree_wd_distance,
    laplacian_signature,
    normalized_laplacian,
    pairwise_similarity,
    spectral_distance,
    spectral_signature,
    spectral_similarity,
    symmetric_eigenvalues,
)

S2 = math.sqrt(2)


def pcm(rows):
    return ParityCheckMatrix.from_rows(rows)


def sig(values):
    return SpectralSignature(np.array(values, dtype=float), (2, 1))


class TestAdjacency:
    def test_single_check(self):
        assert bipartite_adjacency(pcm([[1, 1]])).tolist() == [[0, 0, 1], [0, 0, 1], [1, 1, 0]]

    def test_identity_matching(self):
        adj = bipartite_adjacency(pcm([[1, 0, 0], [0, 1, 0]]))
        assert adj.shape == (5, 5)
        assert adj[0, 3] == adj[1, 4] == 1 and adj.sum() == 4

    def test_random_symmetric(self):
        bits = np.random.default_rng(0).integers(0, 2, (5, 9))
        adj = bipartite_adjacency(pcm(bits))
        assert np.array_equal(adj, adj.T)
        assert not adj[:9, :9].any() and not adj[9:, 9:].any()


class TestJacobi:
    def test_path_graph(self):
        eig = symmetric_eigenvalues(bipartite_adjacency(pcm([[1, 1]])))
        np.testing.assert_allclose(eig, [S2, 0, -S2], atol=1e-10)

    def test_complete_bipartite(self):
        eig = symmetric_eigenvalues(bipartite_adjacency(pcm([[1, 1, 1], [1, 1, 1]])))
        np.testing.assert_allclose(eig, [math.sqrt(6), 0, 0, 0, -math.sqrt(6)], atol=1e-10)

    def test_diagonal(self):
        assert symmetric_eigenvalues(np.diag([3.0, 1.0, -2.0])).tolist() == [3.0, 1.0, -2.0]

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            symmetric_eigenvalues(np.array([[0.0, 1.0], [0.5, 0.0]]))

    def test_sweep_cap(self):
        a = np.random.default_rng(1).normal(size=(12, 12))
        with pytest.raises(ConvergenceError) as err:
            symmetric_eigenvalues(a + a.T, max_sweeps=1)
        assert err.value.residual > 1e-10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 14), st.integers(0, 2**31))
    def test_against_lapack(self, d, seed):
        a = np.random.default_rng(seed).normal(size=(d, d))
        a = a + a.T
        ours = symmetric_eigenvalues(a)
        ref = np.sort(np.linalg.eigvalsh(a))[::-1]
        assert np.abs(ours - ref).max() <= 1e-8 * max(1.0, np.linalg.norm(a))
        assert abs(ours.sum() - np.trace(a)) < 1e-8


class TestSignature:
    def test_path_graph_k3_and_padding(self):
        h = pcm([[1, 1]])
        np.testing.assert_allclose(spectral_signature(h, 3).values, [S2, -S2, 0], atol=1e-10)
        s5 = spectral_signature(h, 5).values
        np.testing.assert_allclose(s5, [S2, -S2, 0, 0, 0], atol=1e-10)
        assert (s5[3:] == 0).all()

    def test_ordering_invariant(self):
        for name in catalog_names():
            v = spectral_signature(catalog_get(name).pcm, 20).values
            mags = np.abs(v)
            assert (mags[:-1] >= mags[1:] - 1e-9).all(), name
            for i in range(len(v) - 1):
                if abs(mags[i] - mags[i + 1]) < 1e-9:
                    assert v[i] >= v[i + 1] - 1e-9

    @settings(max_examples=20, deadline=None)
    @given(st.sampled_from(["HAMMING_7_4", "BCH_15_7", "LDPC_24_12", "POLAR_16_8"]), st.randoms())
    def test_permutation_invariance(self, name, rnd):
        h = catalog_get(name).pcm
        perm = list(range(h.n))
        rnd.shuffle(perm)
        a = spectral_signature(h).values
        b = spectral_signature(permute_columns(h, perm)).values
        assert np.abs(a - b).max() < 1e-8

    def test_rref_changes_ldpc_signature(self):
        h = catalog_get("LDPC_24_12").pcm
        assert spectral_distance(spectral_signature(h), spectral_signature(rref_gf2(h))) > 1e-3

    def test_catalog_spectral_identities(self):
        for name in catalog_names():
            h = catalog_get(name).pcm
            eig = symmetric_eigenvalues(bipartite_adjacency(h))
            assert np.abs(np.sort(eig) - np.sort(-eig)).max() < 1e-8
            assert abs(eig.sum()) < 1e-8
            assert abs((eig**2).sum() - 2 * h.nnz) < 1e-6

    def test_k_validation(self):
        with pytest.raises(ValidationError):
            spectral_signature(pcm([[1, 1]]), 0)


class TestDistanceSimilarity:
    def test_distance_examples(self):
        assert spectral_distance(sig([1, 2]), sig([1, 2])) == 0
        assert spectral_distance(sig([1, 0]), sig([0, 1])) == pytest.approx(S2)

    def test_k_mismatch(self):
        with pytest.raises(ValidationError):
            spectral_distance(sig([1, 0]), sig([1, 0, 0]))

    @given(st.lists(st.lists(st.floats(-10, 10), min_size=4, max_size=4), min_size=3, max_size=3))
    def test_metric_properties(self, rows):
        a, b, c = (sig(r) for r in rows)
        assert spectral_distance(a, b) == spectral_distance(b, a)
        assert spectral_distance(a, c) <= spectral_distance(a, b) + spectral_distance(b, c) + 1e-9

    def test_similarity_examples(self):
        p = SimilarityParams(0.1)
        assert spectral_similarity(0.0, p) == 1.0
        assert spectral_similarity(math.log(2) / 0.1, p) == pytest.approx(0.5, abs=1e-15)
        assert spectral_similarity(10.0, p) == pytest.approx(math.exp(-1), abs=1e-15)
        with pytest.raises(ValidationError):
            SimilarityParams(0.0)

    @given(st.floats(0, 50), st.floats(0.001, 10))
    def test_similarity_monotone(self, d, step):
        assert 0 < spectral_similarity(d + step) < spectral_similarity(d) <= 1


class TestBetaCalibration:
    def test_examples(self):
        assert calibrate_beta_median([0, 1, 2, 3]) == pytest.approx(math.log(2) / 2, rel=1e-15)
        assert calibrate_beta_median([5]) == pytest.approx(math.log(2) / 5, rel=1e-15)
        with pytest.raises(ValidationError):
            calibrate_beta_median([0, 0])

    @settings(max_examples=100)
    @given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=30))
    def test_median_is_half_when_representable(self, ds):
        beta = calibrate_beta_median(ds)
        med = float(np.median(ds))
        val = math.exp(-beta * med)
        if val != 0.5:
            # no double within 256 ulps does better
            b = beta
            for direction in (math.inf, -math.inf):
                b = beta
                for _ in range(256):
                    b = float(np.nextafter(b, direction))
                    assert math.exp(-b * med) != 0.5
            assert abs(val - 0.5) <= np.spacing(0.5)

    def test_median_exact_examples(self):
        for ds in ([1.0, 2.0, 3.0], [0.5], [6.931471805599453], [10.0, 20.0]):
            assert math.exp(-calibrate_beta_median(ds) * float(np.median(ds))) == 0.5


class TestAlternateMetrics:
    def test_wd_self_and_symmetry(self):
        a = catalog_get("LDPC_24_12").pcm
        b = catalog_get("BCH_15_7").pcm
        assert degree_wd_distance(a, a) == 0
        assert degree_wd_distance(a, b) == pytest.approx(degree_wd_distance(b, a))

    def test_wd_point_masses(self):
        # 8 variables of degree 3 (or 4) against 6 (or 8) checks of degree 4
        # 16 variables of degree 3 (or 4) against checks of degree 8
        def regular(dv):
            m = 16 * dv // 8
            h = np.zeros((m, 16), dtype=np.uint8)
            for v in range(16):
                for j in range(dv):
                    h[(j * 16 + v) // 8, v] = 1
            assert (h.sum(axis=0) == dv).all() and (h.sum(axis=1) == 8).all()
            return pcm(h)

        assert degree_wd_distance(regular(3), regular(4)) == pytest.approx(1.0, abs=1e-12)

    def test_wd_needs_edges(self):
        with pytest.raises(ValidationError):
            degree_wd_distance(pcm([[0, 0]]), pcm([[1, 1]]))

    def test_laplacian_path(self):
        np.testing.assert_allclose(laplacian_signature(pcm([[1, 1]]), 2).values, [0, 1], atol=1e-10)

    def test_laplacian_range_and_bipartite_top(self):
        h = catalog_get("LDPC_24_12").pcm
        eig = symmetric_eigenvalues(normalized_laplacian(h))
        assert eig.min() > -1e-8 and eig.max() < 2 + 1e-8
        assert abs(eig.max() - 2) < 1e-8 and abs(eig.min()) < 1e-8

    def test_laplacian_isolated(self):
        with pytest.raises(ValidationError):
            laplacian_signature(pcm([[1, 0, 1], [1, 0, 1]]))

    def test_pairwise_metrics(self):
        a, b = catalog_get("LDPC_24_12").pcm, catalog_get("LDPC_24_12_B").pcm
        for metric in Metric:
            k = pairwise_similarity(a, b, SimilarityParams(0.5, metric))
            assert 0 < k <= 1
            assert pairwise_similarity(a, a, SimilarityParams(0.5, metric)) == 1.0

    def test_metric_mismatch(self):
        h = catalog_get("HAMMING_7_4").pcm
        with pytest.raises(ValidationError):
            spectral_distance(spectral_signature(h), laplacian_signature(h))

import numpy as np
import pytest

from apnet.encoder import (
    CentroidSet,
    ExpertParams,
    encode,
    encode_batch,
    expert_preactivations,
    fit_centroids,
)
from apnet.numerics import SeededRng


def scalar_encode(s, C, W, b):
    """Direct per-coordinate evaluation of sum_i relu(W_i (s - C_i) + b_i)."""
    k, feat, attr = len(W), len(W[0]), len(W[0][0])
    out = [0.0] * feat
    for i in range(k):
        for r in range(feat):
            acc = b[i][r]
            for j in range(attr):
                acc += W[i][r][j] * (s[j] - C[i][j])
            out[r] += max(acc, 0.0)
    return np.array(out)


class TestFitCentroids:
    def test_single_centroid_is_mean(self):
        s = np.random.default_rng(0).uniform(size=(9, 4))
        cs = fit_centroids(s, 1, SeededRng(0))
        np.testing.assert_allclose(cs.C[0], s.mean(axis=0), rtol=1e-14)

    def test_separated_clusters(self):
        rng = np.random.default_rng(1)
        centres = np.array([[0, 0], [20, 0], [0, 20], [20, 20]], dtype=float)
        s = np.vstack([c + rng.normal(0, 0.1, (5, 2)) for c in centres])
        cs = fit_centroids(s, 4, SeededRng(3))
        for i, c in enumerate(centres):
            members = s[5 * i : 5 * i + 5]
            nearest = cs.C[np.argmin(((cs.C - c) ** 2).sum(1))]
            np.testing.assert_allclose(nearest, members.mean(0), atol=1e-12)

    def test_identical_rows(self):
        s = np.tile([0.3, 0.7, 0.1], (6, 1))
        cs = fit_centroids(s, 3, SeededRng(0))
        np.testing.assert_array_equal(cs.C, np.tile(s[0], (3, 1)))

    def test_frozen(self):
        cs = fit_centroids(np.eye(3), 2, SeededRng(0))
        with pytest.raises(ValueError):
            cs.C[0, 0] = 1.0

    def test_too_many_centroids(self):
        with pytest.raises(ValueError):
            fit_centroids(np.eye(3), 4, SeededRng(0))


class TestEncode:
    def test_identity_expert(self):
        cs = CentroidSet(np.zeros((1, 2)))
        ex = ExpertParams(np.eye(2)[None], np.zeros((1, 2)))
        np.testing.assert_array_equal(encode([-1.0, 2.0], cs, ex), [0.0, 2.0])

    def test_at_centroid_is_zero(self):
        rng = np.random.default_rng(2)
        C = rng.normal(size=(1, 3))
        ex = ExpertParams(rng.normal(size=(1, 4, 3)), np.zeros((1, 4)))
        np.testing.assert_array_equal(encode(C[0], CentroidSet(C), ex), np.zeros(4))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        C = rng.normal(size=(2, 3))
        W, b = rng.normal(size=(2, 4, 3)), rng.normal(size=(2, 4))
        s = rng.normal(size=3)
        got = encode(s, CentroidSet(C), ExpertParams(W, b))
        np.testing.assert_allclose(got, scalar_encode(s.tolist(), C.tolist(), W.tolist(), b.tolist()), rtol=1e-13, atol=1e-14)

    def test_batch_equals_rows(self):
        rng = np.random.default_rng(4)
        cs = CentroidSet(rng.normal(size=(3, 5)))
        ex = ExpertParams.init(3, 5, 7, SeededRng(0))
        ex.bias[:] = rng.normal(size=ex.bias.shape)
        S = rng.normal(size=(6, 5))
        batch = encode_batch(S, cs, ex)
        for i in range(6):
            assert np.array_equal(batch[i], encode(S[i], cs, ex))

    def test_per_expert_terms_nonnegative(self):
        rng = np.random.default_rng(5)
        cs = CentroidSet(rng.normal(size=(3, 4)))
        ex = ExpertParams(rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 6)))
        pre = expert_preactivations(rng.normal(size=(5, 4)), cs, ex)
        assert all((np.maximum(p, 0) >= 0).all() for p in pre)
        assert (encode_batch(rng.normal(size=(5, 4)), cs, ex) >= 0).all()

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(6)
        C = rng.normal(size=(1, 3))
        ex = ExpertParams(rng.normal(size=(1, 5, 3)), np.zeros((1, 5)))
        s = rng.normal(size=3)
        once = encode(s, CentroidSet(C), ex)
        twice = encode(C[0] + 2 * (s - C[0]), CentroidSet(C), ex)
        np.testing.assert_allclose(twice, 2 * once, rtol=1e-13, atol=1e-15)

    def test_dimension_mismatch(self):
        cs = CentroidSet(np.zeros((1, 3)))
        ex = ExpertParams(np.zeros((1, 2, 3)), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            encode([1.0, 2.0], cs, ex)
        with pytest.raises(ValueError):
            encode([1.0, 2.0, 3.0], CentroidSet(np.zeros((2, 3))), ex)

    def test_init_bounds(self):
        ex = ExpertParams.init(3, 16, 8, SeededRng(0))
        assert ex.weight.shape == (3, 8, 16)
        assert np.abs(ex.weight).max() <= 1 / 4
        assert not ex.bias.any()

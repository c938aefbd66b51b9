import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ttsnet.core import Trial
from ttsnet.trca import (DegenerateCcaError, InsufficientTrialsError, SpatialFilter,
                         apply_spatial, cca, class_covariances, fit_trca, generalized_eigh,
                         spatial_filter_batch)


def centered(rng, *shape):
    X = rng.standard_normal(shape)
    return X - X.mean(axis=-1, keepdims=True)


def random_classes(rng, K=2, N=4, C=4, T=16, signal=1.0):
    common = rng.standard_normal((K, C, T)) * signal
    return [common[k] + rng.standard_normal((N, C, T)) for k in range(K)]


# covariances ---------------------------------------------------------------------

def test_identical_trials_identity(rng):
    X = centered(rng, 3, 10)
    N = 5
    S, Q = class_covariances(np.repeat(X[None], N, axis=0))
    np.testing.assert_allclose(S, N * (N - 1) * X @ X.T, atol=1e-10)
    np.testing.assert_allclose(Q, N * X @ X.T, atol=1e-10)


def test_opposite_trials(rng):
    X = centered(rng, 3, 10)
    S, _ = class_covariances(np.stack([X, -X]))
    np.testing.assert_allclose(S, -2 * X @ X.T, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_covariances_match_brute_force(seed):
    trials = np.random.default_rng(seed).standard_normal((3, 3, 8)) + 2.0
    S, Q = class_covariances(trials)
    S_ref, Q_ref = oracles.class_covariances(trials)
    np.testing.assert_allclose(S, S_ref, atol=1e-10)
    np.testing.assert_allclose(Q, Q_ref, atol=1e-10)
    assert np.array_equal(S, S.T) and np.array_equal(Q, Q.T)
    assert np.linalg.eigvalsh(Q).min() > -1e-10


def test_covariances_need_two_trials(rng):
    with pytest.raises(InsufficientTrialsError):
        class_covariances(rng.standard_normal((1, 3, 8)))


# TRCA ---------------------------------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_trca_eigen_residual_and_quotients(seed):
    rng = np.random.default_rng(seed)
    by_class = random_classes(rng)
    filt = fit_trca(by_class, 4)
    S = sum(class_covariances(c)[0] for c in by_class)
    Q = sum(class_covariances(c)[1] for c in by_class)
    lam = filt.eigenvalues
    assert np.all(np.diff(lam) <= 0)
    for p in range(4):
        w = filt.W[:, p]
        assert np.linalg.norm(w) == pytest.approx(1.0)
        assert w @ S @ w / (w @ Q @ w) == pytest.approx(lam[p], abs=1e-8)
        assert np.linalg.norm(S @ w - lam[p] * Q @ w) <= 1e-6 * np.linalg.norm(S, 2)
    probes = rng.standard_normal((1000, 4))
    rq = np.einsum("nc,cd,nd->n", probes, S, probes) / np.einsum("nc,cd,nd->n", probes, Q, probes)
    assert lam[0] >= rq.max()


def test_trca_identical_trials_quotient():
    X = centered(np.random.default_rng(1), 3, 20)
    N = 4
    filt = fit_trca([np.repeat(X[None], N, axis=0)], 1)
    assert filt.eigenvalues[0] == pytest.approx(N - 1, rel=1e-6)


def test_trca_full_rank_reconstruction(rng):
    filt = fit_trca(random_classes(rng), 4)
    x = rng.standard_normal(4)
    np.testing.assert_allclose(filt.W @ np.linalg.pinv(filt.W) @ x, x, atol=1e-8)


def test_trca_errors(rng):
    with pytest.raises(ValueError):
        fit_trca(random_classes(rng), 5)
    with pytest.raises(InsufficientTrialsError):
        fit_trca([rng.standard_normal((3, 4, 16)), rng.standard_normal((1, 4, 16))], 2)


def test_trca_channel_permutation(rng):
    by_class = random_classes(rng)
    perm = np.array([2, 0, 3, 1])
    a = fit_trca(by_class, 3)
    b = fit_trca([c[:, perm] for c in by_class], 3)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-9)
    np.testing.assert_allclose(np.abs(a.W[perm]), np.abs(b.W), atol=1e-8)


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 7.0, 1e4])
def test_trca_scale_invariance(rng, alpha):
    by_class = random_classes(rng)
    a = fit_trca(by_class, 3)
    b = fit_trca([alpha * c for c in by_class], 3)
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-7)
    np.testing.assert_allclose(a.W, b.W, atol=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_top_component_stable_under_ridge(seed):
    rng = np.random.default_rng(seed)
    by_class = random_classes(rng)
    S = sum(class_covariances(c)[0] for c in by_class)
    Q = sum(class_covariances(c)[1] for c in by_class)
    tops = []
    for ridge in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        lam, V = generalized_eigh(S, Q, ridge)
        w = V[:, 0] / np.linalg.norm(V[:, 0])
        tops.append(w * np.sign(w[np.argmax(np.abs(w))]))
    for w in tops[1:]:
        assert abs(w @ tops[0]) > 1 - 1e-4


# spatial application ---------------------------------------------------------------------

def test_apply_identity_and_zero(rng):
    X = rng.standard_normal((3, 9))
    eye = SpatialFilter(np.eye(3), np.ones(3))
    np.testing.assert_array_equal(apply_spatial(X, eye), X.T)
    assert not apply_spatial(Trial(np.zeros((3, 9)), 100.0, 0), eye).any()


def test_apply_matches_naive_product(rng):
    X, W = rng.standard_normal((4, 12)), rng.standard_normal((4, 2))
    ref = oracles.matmul(X.T.tolist(), W.tolist())
    np.testing.assert_allclose(apply_spatial(X, SpatialFilter(W, np.ones(2))), ref, atol=1e-12)
    batch = spatial_filter_batch(X[None], SpatialFilter(W, np.ones(2)))
    np.testing.assert_allclose(batch[0].T, ref, atol=1e-12)


def test_apply_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        apply_spatial(rng.standard_normal((3, 5)), SpatialFilter(np.eye(4), np.ones(4)))


# CCA -------------------------------------------------------------------------------------------

def test_cca_self(rng):
    X = rng.standard_normal((30, 3))
    np.testing.assert_allclose(cca(X, X).correlations, 1.0, atol=1e-10)


def test_cca_orthogonal(rng):
    Q, _ = np.linalg.qr(np.column_stack([np.ones(40), rng.standard_normal((40, 6))]))
    X, Y = Q[:, 1:4], Q[:, 4:7]  # orthogonal to each other and to the constant
    np.testing.assert_allclose(cca(X, Y).correlations, 0.0, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_cca_matches_whitened_svd_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((64, 3))
    Y = X @ rng.standard_normal((3, 3)) * 0.5 + rng.standard_normal((64, 3))
    res = cca(X, Y)
    corrs, A, B = oracles.cca(X, Y)
    np.testing.assert_allclose(res.correlations, corrs, atol=1e-8)
    np.testing.assert_allclose(res.A, A, atol=1e-8)
    np.testing.assert_allclose(res.B, B, atol=1e-8)


def test_cca_variates(rng):
    X = rng.standard_normal((50, 3))
    Y = X[:, ::-1] + 0.8 * rng.standard_normal((50, 3))
    res = cca(X, Y)
    U = (X - X.mean(0)) @ res.A
    V = (Y - Y.mean(0)) @ res.B
    for i in range(3):
        assert np.corrcoef(U[:, i], V[:, i])[0, 1] == pytest.approx(res.correlations[i], abs=1e-8)
    cu = np.corrcoef(U.T)
    assert np.abs(cu - np.diag(np.diag(cu))).max() < 1e-6
    assert np.all(np.diff(res.correlations) <= 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_cca_invariant_to_recombination(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((40, 3))
    Y = X + rng.standard_normal((40, 3))
    M = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    np.testing.assert_allclose(cca(X @ M, Y).correlations, cca(X, Y).correlations, atol=1e-6)


def test_cca_degenerate(rng):
    with pytest.raises(DegenerateCcaError):
        cca(rng.standard_normal((3, 3)), rng.standard_normal((3, 3)))
    with pytest.raises(DegenerateCcaError):
        cca(np.ones((10, 2)), rng.standard_normal((10, 2)))

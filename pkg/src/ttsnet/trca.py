"""Task-related component analysis and canonical correlation analysis."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Trial

RIDGE_TRCA = 1e-9
RIDGE_CCA = 1e-10


class InsufficientTrialsError(ValueError):
    pass


class DegenerateCcaError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialFilter:
    """Projection ``W`` (C x P) with the generalized eigenvalues of its columns."""

    W: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.W.shape[0]

    @property
    def n_components(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class CcaResult:
    A: np.ndarray
    B: np.ndarray
    correlations: np.ndarray


def _center_trials(trials) -> np.ndarray:
    X = np.asarray(trials, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected (N, C, T) trials, got shape {X.shape}")
    return X - X.mean(axis=2, keepdims=True)


def class_covariances(trials) -> tuple:
    """Inter-trial covariance ``S`` and self-covariance ``Q`` of one class.

    ``S = sum_{i<j} X_i X_j^T + X_j X_i^T`` and ``Q = sum_i X_i X_i^T`` over
    channel-centered trials, both C x C and exactly symmetric.
    """
    X = _center_trials(trials)
    if X.shape[0] < 2:
        raise InsufficientTrialsError(f"need >= 2 trials per class, got {X.shape[0]}")
    N, C, T = X.shape
    flat = X.transpose(1, 0, 2).reshape(C, N * T)
    Q = flat @ flat.T
    total = X.sum(axis=0)
    # sum over ordered pairs i != j equals (sum X)(sum X)^T minus the diagonal terms
    S = total @ total.T - Q
    return (S + S.T) / 2, (Q + Q.T) / 2


def generalized_eigh(S: np.ndarray, Q: np.ndarray, ridge: float = RIDGE_TRCA):
    """Solve ``S w = lam (Q + eps I) w`` for symmetric S and PSD Q.

    Reduces to a standard symmetric problem through the Cholesky factor of
    ``Q + eps I`` with ``eps = ridge * trace(Q) / C``. Returns eigenvalues in
    descending order and the matching eigenvectors as columns.
    """
    C = Q.shape[0]
    eps = ridge * np.trace(Q) / C
    if not eps > 0:
        raise np.linalg.LinAlgError("self-covariance has zero trace")
    L = np.linalg.cholesky(Q + eps * np.eye(C))
    Linv = np.linalg.solve(L, np.eye(C))
    M = Linv @ S @ Linv.T
    lam, V = np.linalg.eigh((M + M.T) / 2)
    order = np.argsort(lam)[::-1]
    return lam[order], Linv.T @ V[:, order]


def _fix_sign(W: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(W), axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1
    return W * signs


def fit_trca(by_class: Sequence, n_components: int, ridge: float = RIDGE_TRCA) -> SpatialFilter:
    """Fit the TRCA spatial filter on trials grouped by class.

    ``by_class`` holds one (N_k, C, T) array per class. Class scatter
    matrices are summed in class order; the ``n_components`` generalized
    eigenvectors with the largest eigenvalues become unit-norm columns of
    ``W`` (sign fixed so the largest-magnitude entry is positive). Reported
    eigenvalues are the Rayleigh quotients ``w^T S w / w^T Q w``.
    """
    if not by_class:
        raise InsufficientTrialsError("no classes given")
    C = np.asarray(by_class[0]).shape[1]
    if not 1 <= n_components <= C:
        raise ValueError(f"n_components must lie in [1, {C}], got {n_components}")
    S = np.zeros((C, C))
    Q = np.zeros((C, C))
    for k, trials in enumerate(by_class):
        if len(trials) < 2:
            raise InsufficientTrialsError(f"class {k} has {len(trials)} trials, need >= 2")
        S_k, Q_k = class_covariances(trials)
        S += S_k
        Q += Q_k
    _, V = generalized_eigh(S, Q, ridge)
    W = V[:, :n_components]
    W = _fix_sign(W / np.linalg.norm(W, axis=0))
    quotients = np.einsum("cp,cd,dp->p", W, S, W) / np.einsum("cp,cd,dp->p", W, Q, W)
    return SpatialFilter(W=W, eigenvalues=quotients)


def apply_spatial(trial, filt: SpatialFilter) -> np.ndarray:
    """Spatially filtered signal ``X^T W`` of shape (T, P)."""
    X = trial.data if isinstance(trial, Trial) else np.asarray(trial)
    if X.shape[0] != filt.n_channels:
        raise ValueError(f"trial has {X.shape[0]} channels, filter expects {filt.n_channels}")
    return X.T @ filt.W


def spatial_filter_batch(X: np.ndarray, filt: SpatialFilter) -> np.ndarray:
    """Project an (N, C, T) batch to (N, P, T), i.e. ``(X_n^T W)^T`` per trial."""
    if X.shape[1] != filt.n_channels:
        raise ValueError(f"trials have {X.shape[1]} channels, filter expects {filt.n_channels}")
    return np.einsum("cp,nct->npt", filt.W, X)


def _inv_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(M)
    return (V / np.sqrt(w)) @ V.T


def cca(X: np.ndarray, Y: np.ndarray, ridge: float = RIDGE_CCA) -> CcaResult:
    """Canonical correlation analysis of two (T x P) matrices.

    Columns are centered; each auto-covariance gets a ridge of
    ``ridge * trace`` before whitening. ``X @ A[:, i]`` and ``Y @ B[:, i]``
    are the i-th canonical variates (unit variance up to the ridge) with
    correlation ``correlations[i]``, sorted descending. Each pair's sign is
    chosen so the largest-magnitude entry of ``A[:, i]`` is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"cca needs two matrices with equal rows, got {X.shape} and {Y.shape}")
    T = X.shape[0]
    if T <= max(X.shape[1], Y.shape[1]):
        raise DegenerateCcaError(f"need more rows ({T}) than columns")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    Cxx = Xc.T @ Xc
    Cyy = Yc.T @ Yc
    tx, ty = np.trace(Cxx), np.trace(Cyy)
    if not (tx > 0 and ty > 0 and np.isfinite(tx) and np.isfinite(ty)):
        raise DegenerateCcaError("an input has no variance after centering")
    Wx = _inv_sqrt(Cxx + ridge * tx * np.eye(Cxx.shape[0]))
    Wy = _inv_sqrt(Cyy + ridge * ty * np.eye(Cyy.shape[0]))
    U, s, Vt = np.linalg.svd(Wx @ (Xc.T @ Yc) @ Wy)
    r = min(X.shape[1], Y.shape[1])
    A, B = Wx @ U[:, :r], Wy @ Vt.T[:, :r]
    # the SVD fixes each pair only up to a joint sign flip; make it deterministic
    signs = np.sign(A[np.argmax(np.abs(A), axis=0), np.arange(r)])
    signs[signs == 0] = 1
    return CcaResult(A=A * signs, B=B * signs, correlations=np.clip(s[:r], 0.0, 1.0))

"""Correlation-feature decoding: grand averages, TRCA correlation features,
mRMR feature selection and linear classifiers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.metrics import mutual_info_score

from .trca import SpatialFilter, cca, fit_trca

KINDS = ("rho1", "rho2", "rho3")
MI_BINS = 8


@dataclass(frozen=True)
class GrandAverages:
    class_means: np.ndarray  # (K, C, T)
    common_mean: np.ndarray  # (C, T)

    @classmethod
    def fit(cls, by_class: Sequence) -> "GrandAverages":
        means = np.stack([grand_average(t) for t in by_class])
        return cls(class_means=means, common_mean=means.mean(axis=0))

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[0]


def grand_average(trials) -> np.ndarray:
    """Element-wise mean over trials."""
    X = np.asarray(trials, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] == 0:
        raise ValueError("grand average needs a non-empty (N, C, T) stack")
    return X.mean(axis=0)


def remove_common(ga: GrandAverages, x: np.ndarray) -> np.ndarray:
    """Subtract the mean of the class grand averages."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != ga.common_mean.shape:
        raise ValueError(f"shape {x.shape} does not match grand averages {ga.common_mean.shape}")
    return x - ga.common_mean


def corr2(X: np.ndarray, Y: np.ndarray) -> float:
    """Correlation of two equally shaped matrices after removing each one's overall mean."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    X = X - X.mean()
    Y = Y - Y.mean()
    denom = np.sqrt(np.sum(X * X) * np.sum(Y * Y))
    if denom == 0:
        raise ValueError("corr2 of a zero-norm matrix")
    return float(np.clip(np.sum(X * Y) / denom, -1.0, 1.0))


@dataclass(frozen=True)
class TrcaBankModel:
    """One filter bank's fitted spatial filter, grand averages and filtered templates."""

    filter: SpatialFilter
    averages: GrandAverages
    templates: np.ndarray  # (K, T, P): spatially filtered, common-removed class averages
    others: np.ndarray  # (K, T, P): mean template of all other classes
    paired: bool = False

    @classmethod
    def fit(cls, by_class: Sequence, n_components: int, paired: bool = False) -> "TrcaBankModel":
        filt = fit_trca(by_class, n_components)
        ga = GrandAverages.fit(by_class)
        centered = ga.class_means - ga.common_mean
        templates = np.einsum("kct,cp->ktp", centered, filt.W)
        K = len(by_class)
        others = (templates.sum(axis=0)[None] - templates) / (K - 1)
        return cls(filt, ga, templates, others, paired)

    @property
    def n_classes(self) -> int:
        return self.templates.shape[0]

    def features(self, x: np.ndarray) -> np.ndarray:
        """(K, 3) correlation features of one (C, T) trial."""
        return np.array([rho_features(x, self, k) for k in range(self.n_classes)])


def rho_features(x: np.ndarray, model: TrcaBankModel, k: int) -> tuple:
    """The three correlation features of trial ``x`` against class ``k``.

    ``rho1`` correlates the filtered trial with the class template; ``rho2``
    correlates both after projecting by the template-side CCA weights;
    ``rho3`` correlates the trial-minus-template and the
    others-minus-template differences after projecting by the first-side
    CCA weights. With ``model.paired`` each side uses its own CCA weights.
    """
    X_star = remove_common(model.averages, x).T @ model.filter.W
    X_k = model.templates[k]
    X_not_k = model.others[k]
    rho1 = corr2(X_star, X_k)
    res = cca(X_star, X_k)
    if model.paired:
        rho2 = corr2(X_star @ res.A, X_k @ res.B)
    else:
        rho2 = corr2(X_star @ res.B, X_k @ res.B)
    D1, D2 = X_star - X_k, X_not_k - X_k
    res = cca(D1, D2)
    if model.paired:
        rho3 = corr2(D1 @ res.A, D2 @ res.B)
    else:
        rho3 = corr2(D1 @ res.A, D2 @ res.A)
    return rho1, rho2, rho3


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    provenance: tuple  # (bank, class, kind) per entry


def feature_provenance(n_banks: int, n_classes: int) -> tuple:
    return tuple((f, k, kind) for f in range(n_banks) for k in range(n_classes) for kind in KINDS)


def assemble_features(x_per_bank: Sequence, models: Sequence) -> FeatureVector:
    """Concatenate bank-major, then class, then feature kind (length 3 K F)."""
    if len(x_per_bank) != len(models):
        raise ValueError(f"{len(x_per_bank)} bank signals for {len(models)} bank models")
    if any(m is None for m in models):
        raise ValueError("missing bank model")
    values = np.concatenate([m.features(x).ravel() for x, m in zip(x_per_bank, models)])
    return FeatureVector(values, feature_provenance(len(models), models[0].n_classes))


def discretize(column: np.ndarray, bins: int = MI_BINS) -> np.ndarray:
    """Equal-frequency binning; tied values always share a bin."""
    edges = np.quantile(column, np.arange(1, bins) / bins)
    return np.searchsorted(edges, column, side="right")


def mrmr_select(features: np.ndarray, labels: np.ndarray, m: int) -> list:
    """Greedy minimum-redundancy maximum-relevance selection.

    Each step adds the feature maximizing ``I(f; y) - mean_{s in S} I(f; s)``
    with mutual information estimated on 8 equal-frequency bins; ties go to
    the lower index. Constant columns are skipped with a warning.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    n, d = features.shape
    if m > d:
        raise ValueError(f"cannot select {m} of {d} features")
    constant = np.all(features == features[:1], axis=0)
    if constant.any():
        warnings.warn(f"skipping {int(constant.sum())} constant feature column(s)", stacklevel=2)
    candidates = [j for j in range(d) if not constant[j]]
    binned = {j: discretize(features[:, j]) for j in candidates}
    relevance = {j: mutual_info_score(labels, binned[j]) for j in candidates}
    redundancy = {j: 0.0 for j in candidates}
    selected = []
    while candidates and len(selected) < m:
        if selected:
            last = binned[selected[-1]]
            for j in candidates:
                redundancy[j] += mutual_info_score(last, binned[j])
            scores = [relevance[j] - redundancy[j] / len(selected) for j in candidates]
        else:
            scores = [relevance[j] for j in candidates]
        best = candidates[int(np.argmax(scores))]
        selected.append(best)
        candidates.remove(best)
    return selected


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray  # (d, K)
    bias: np.ndarray  # (K,)
    kind: str

    def scores(self, features: np.ndarray) -> np.ndarray:
        # per-row reduction: a sample's score never depends on the rest of the batch
        X = np.asarray(features, dtype=np.float64)
        return np.einsum("nd,dk->nk", X, self.weights, optimize=False) + self.bias


def _class_counts(labels, K):
    counts = np.bincount(labels, minlength=K)
    if np.any(counts < 2):
        raise ValueError(f"need >= 2 samples per class, got counts {counts.tolist()}")
    return counts


def fit_lda(X, y, K, ridge=1e-6) -> LinearModel:
    counts = _class_counts(y, K)
    d = X.shape[1]
    means = np.stack([X[y == k].mean(axis=0) for k in range(K)])
    centered = X - means[y]
    cov = centered.T @ centered / max(len(X) - K, 1)
    cov += ridge * np.trace(cov) / d * np.eye(d) if np.trace(cov) > 0 else ridge * np.eye(d)
    try:
        inv_means = np.linalg.solve(cov, means.T)  # d x K
    except np.linalg.LinAlgError as exc:
        raise ValueError("pooled covariance is singular") from exc
    bias = -0.5 * np.einsum("kd,dk->k", means, inv_means) + np.log(counts / counts.sum())
    return LinearModel(inv_means, bias, "lda")


def fit_svm(X, y, K, lam=1e-2, epochs=500, lr=0.1) -> LinearModel:
    """One-vs-rest linear SVM by full-batch subgradient descent on the L2-regularized hinge loss."""
    _class_counts(y, K)
    n, d = X.shape
    targets = np.where(y[:, None] == np.arange(K)[None, :], 1.0, -1.0)  # n x K
    W = np.zeros((d, K))
    b = np.zeros(K)
    for t in range(1, epochs + 1):
        margins = targets * (X @ W + b)
        active = (margins < 1) * targets  # n x K
        gW = lam * W - X.T @ active / n
        gb = -active.sum(axis=0) / n
        step = lr / np.sqrt(t)
        W -= step * gW
        b -= step * gb
    return LinearModel(W, b, "linear-svm")


def fit_linear(features, labels, kind: str = "linear-svm", n_classes: int = None) -> LinearModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    K = int(y.max()) + 1 if n_classes is None else n_classes
    if kind == "lda":
        return fit_lda(X, y, K)
    if kind == "linear-svm":
        return fit_svm(X, y, K)
    raise ValueError(f"unknown classifier kind {kind!r}")


def predict_linear(model: LinearModel, features) -> np.ndarray:
    """Argmax of the class scores; ties go to the lowest class index."""
    return np.argmax(model.scores(features), axis=1)

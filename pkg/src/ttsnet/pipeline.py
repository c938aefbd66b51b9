"""Method registry, model training, and stratified cross-validation."""

from __future__ import annotations

import enum
import hashlib
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .config import ExperimentConfig
from .core import Epochs, make_rng
from .dsp import BandSpec, bandpass_array, preprocess
from .fbtrca import (GrandAverages, TrcaBankModel, assemble_features, fit_linear, mrmr_select)
from .nnet.nets import FusedNet, classifier_head, temporal_decoder
from .nnet.serialize import state_dict
from .nnet.train import TrainConfig, TrainHistory, predict_logits, train_network
from .onset import window_bounds, WindowError
from .trca import SpatialFilter, fit_trca, spatial_filter_batch


class MethodKind(str, enum.Enum):
    FBTRCA = "fbtrca"
    EEGNET = "eegnet"
    TEGNET = "tegnet"
    OTSNET = "otsnet"
    TTSNET = "ttsnet"


class InsufficientDataError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# data preparation


@dataclass(frozen=True)
class PreparedData:
    """Windowed per-trial signals: one (N, C, T) array per filter bank plus the broad band."""

    labels: np.ndarray
    class_count: int
    fs: float
    banks: tuple = ()
    broad: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.labels)

    def take(self, idx) -> "PreparedData":
        idx = np.asarray(idx)
        return PreparedData(
            labels=self.labels[idx], class_count=self.class_count, fs=self.fs,
            banks=tuple(b[idx] for b in self.banks),
            broad=None if self.broad is None else self.broad[idx])


def select_classes(epochs: Epochs, classes) -> Epochs:
    """Keep only ``classes`` (in the given order) and relabel them 0..len-1."""
    if not classes:
        return epochs
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes) or len(classes) < 2:
        raise ValueError(f"need >= 2 distinct classes, got {classes}")
    if max(classes) >= epochs.class_count or min(classes) < 0:
        raise ValueError(f"classes {classes} outside 0..{epochs.class_count - 1}")
    mapping = {c: i for i, c in enumerate(classes)}
    trials = tuple(replace(t, label=mapping[t.label]) for t in epochs.trials if t.label in mapping)
    return Epochs(trials=trials, class_count=len(classes), channel_names=epochs.channel_names)


def task_descriptor(epochs: Epochs, cfg: ExperimentConfig) -> str:
    if cfg.classes:
        kind = "binary" if len(cfg.classes) == 2 else "multiclass"
        return f"{kind}({','.join(str(c) for c in cfg.classes)})"
    kind = "binary" if epochs.class_count == 2 else "multiclass"
    return f"{kind}(K={epochs.class_count})"


def needs(method: MethodKind) -> tuple:
    """Which signal views a method uses: (filter banks, broad band)."""
    method = MethodKind(method)
    return (method in (MethodKind.FBTRCA, MethodKind.OTSNET, MethodKind.TTSNET),
            method in (MethodKind.EEGNET, MethodKind.TEGNET))


def _window_slices(epochs: Epochs, cfg: ExperimentConfig) -> list:
    T = epochs.n_samples
    fs = epochs.fs
    mode = cfg.window_mode
    cue = int(round(0.6 * T)) if cfg.cue_s is None else int(round(cfg.cue_s * fs))
    out = []
    for i, t in enumerate(epochs.trials):
        if mode == "aligned":
            if t.onset_sample is None:
                raise WindowError(f"trial {i} has no onset for an aligned window")
            ref = t.onset_sample
        else:
            ref = cue
        start, stop = window_bounds(mode, ref, fs)
        if start < 0 or stop > T:
            raise WindowError(f"trial {i}: window [{start}, {stop}) outside {T} samples")
        out.append(slice(start, stop))
    return out


def prepare(epochs: Epochs, cfg: ExperimentConfig, method=None) -> PreparedData:
    """Resample, z-normalize, filter and window every trial.

    Every step acts on one trial at a time, so nothing is learned from the
    data here. Filter banks are cut from the normalized signals; filtering
    happens on the full trial before the window is taken.
    """
    method = MethodKind(cfg.method if method is None else method)
    epochs = select_classes(epochs, cfg.classes)
    ep = preprocess(epochs, min(cfg.target_fs, epochs.fs))
    X = ep.to_array()
    slices = _window_slices(ep, cfg)

    def cut(Y):
        return np.stack([Y[i][:, s] for i, s in enumerate(slices)])

    want_banks, want_broad = needs(method)
    banks = ()
    if want_banks:
        bands = [BandSpec(cfg.bank_low_hz, float(h)) for h in cfg.bank_high_hz]
        if ep.fs < 64:
            raise ValueError(f"filter banks need fs >= 64 Hz, got {ep.fs}")
        banks = tuple(cut(bandpass_array(X, ep.fs, b, cfg.filter_order)) for b in bands)
    broad = None
    if want_broad:
        band = BandSpec(*cfg.broad_band_hz)
        broad = cut(bandpass_array(X, ep.fs, band, cfg.filter_order))
    return PreparedData(labels=ep.labels, class_count=ep.class_count, fs=ep.fs,
                        banks=banks, broad=broad)


# ----------------------------------------------------------------------------
# models


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _by_class(X: np.ndarray, labels: np.ndarray, K: int) -> list:
    groups = [X[labels == k] for k in range(K)]
    for k, g in enumerate(groups):
        if len(g) < 2:
            raise InsufficientDataError(f"class {k} has {len(g)} training trials, need >= 2")
    return groups


@dataclass
class SpatialStage:
    """A bank's spatial filter plus the optional common-component template."""

    filter: SpatialFilter
    common: Optional[np.ndarray] = None

    @classmethod
    def fit(cls, X, labels, K, cfg: ExperimentConfig) -> "SpatialStage":
        groups = _by_class(X, labels, K)
        P = cfg.n_components
        if P > X.shape[1]:
            raise ValueError(f"P={P} exceeds {X.shape[1]} channels")
        filt = fit_trca(groups, P)
        common = GrandAverages.fit(groups).common_mean if cfg.decoder_input == "common-removed" else None
        return cls(filt, common)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """(N, C, T) -> network input (N, 1, P, T) float32."""
        if self.common is not None:
            X = X - self.common
        return spatial_filter_batch(X, self.filter)[:, None].astype(np.float32)

    def arrays(self) -> dict:
        out = {"W": self.filter.W, "eigenvalues": self.filter.eigenvalues}
        if self.common is not None:
            out["common"] = self.common
        return out


def _decoder(C, T, K, seed):
    return temporal_decoder(C, T, K, make_rng(seed), dtype=np.float32)


def _train_cfg(cfg: ExperimentConfig, epochs: int, seed: int, weight_decay=0.0) -> TrainConfig:
    return TrainConfig(epochs=epochs, lr=cfg.lr, batch_size=cfg.batch_size,
                       weight_decay=weight_decay, seed=seed)


@dataclass
class FbtrcaModel:
    banks: list
    selected: list
    classifier: object
    kind: str = "fbtrca"
    histories: dict = field(default_factory=dict)
    train_features: Optional[np.ndarray] = None

    def feature_matrix(self, data: PreparedData) -> np.ndarray:
        return np.stack([assemble_features([b[i] for b in data.banks], self.banks).values
                         for i in range(len(data))])

    def scores(self, data: PreparedData) -> np.ndarray:
        return self.classifier.scores(self.feature_matrix(data)[:, self.selected])

    def arrays(self) -> dict:
        out = {}
        for f, m in enumerate(self.banks):
            out[f"bank{f}.W"] = m.filter.W
            out[f"bank{f}.eigenvalues"] = m.filter.eigenvalues
            out[f"bank{f}.class_means"] = m.averages.class_means
            out[f"bank{f}.templates"] = m.templates
        out["selected"] = np.asarray(self.selected)
        out["classifier.weights"] = self.classifier.weights
        out["classifier.bias"] = self.classifier.bias
        return out

    def networks(self) -> dict:
        return {}


@dataclass
class DecoderModel:
    """A single temporal decoder on raw channels (EEGNet) or TRCA components (TEGNet)."""

    net: object
    spatial: Optional[SpatialStage]
    kind: str
    histories: dict = field(default_factory=dict)

    def inputs(self, data: PreparedData) -> np.ndarray:
        if self.spatial is None:
            return data.broad[:, None].astype(np.float32)
        return self.spatial.transform(data.broad)

    def scores(self, data: PreparedData) -> np.ndarray:
        return predict_logits(self.net, self.inputs(data))

    def arrays(self) -> dict:
        out = {f"net.{k}": v for k, v in state_dict(self.net).items()}
        if self.spatial is not None:
            out.update({f"spatial.{k}": v for k, v in self.spatial.arrays().items()})
        return out

    def networks(self) -> dict:
        return {"decoder": self.net}


@dataclass
class FusedModel:
    """Per-bank spatial filters and decoders feeding one head (TTSNet, OTSNet)."""

    net: FusedNet
    spatial: list
    kind: str
    histories: dict = field(default_factory=dict)

    def inputs(self, data: PreparedData) -> list:
        return [s.transform(x) for s, x in zip(self.spatial, data.banks)]

    def scores(self, data: PreparedData) -> np.ndarray:
        return predict_logits(self.net, self.inputs(data))

    def decoder_features(self, data: PreparedData) -> np.ndarray:
        xs = self.inputs(data)
        return np.concatenate([self.net.decoder_features([x[s:s + 256] for x in xs])
                               for s in range(0, len(data), 256)])

    def arrays(self) -> dict:
        out = {f"net.{k}": v for k, v in state_dict(self.net).items()}
        for f, s in enumerate(self.spatial):
            out.update({f"bank{f}.{k}": v for k, v in s.arrays().items()})
        return out

    def networks(self) -> dict:
        nets = {f"decoder{f}": d for f, d in enumerate(self.net.decoders)}
        nets["head"] = self.net.head
        return nets


def train_fbtrca(data: PreparedData, cfg: ExperimentConfig, seed: int = 0) -> FbtrcaModel:
    K = data.class_count
    banks = []
    for f, X in enumerate(data.banks):
        try:
            banks.append(TrcaBankModel.fit(_by_class(X, data.labels, K), cfg.n_components,
                                           paired=cfg.paired_projections))
        except ValueError as exc:
            raise TrainingError(f"bank {f}: {exc}") from exc
    model = FbtrcaModel(banks, [], None)
    feats = model.train_features = model.feature_matrix(data)
    m = min(cfg.n_features, feats.shape[1])
    model.selected = mrmr_select(feats, data.labels, m)
    model.classifier = fit_linear(feats[:, model.selected], data.labels, cfg.classifier, K)
    return model


def train_eegnet(data: PreparedData, cfg: ExperimentConfig, seed: int = 0) -> DecoderModel:
    K = data.class_count
    X = data.broad[:, None].astype(np.float32)
    s = derive_seed(seed, 0)
    net = _decoder(X.shape[2], X.shape[3], K, s)
    hist = train_network(net, X, data.labels, _train_cfg(cfg, cfg.epochs_stage1(K), s))
    return DecoderModel(net, None, "eegnet", {"decoder": hist})


def train_bank_decoder(X: np.ndarray, labels: np.ndarray, K: int, cfg: ExperimentConfig,
                       seed: int):
    """Fit a bank's TRCA filter and train its decoder; shared by TEGNet and TTSNet stage 1."""
    spatial = SpatialStage.fit(X, labels, K, cfg)
    Z = spatial.transform(X)
    net = _decoder(Z.shape[2], Z.shape[3], K, seed)
    hist = train_network(net, Z, labels, _train_cfg(cfg, cfg.epochs_stage1(K), seed))
    return spatial, net, hist


def train_tegnet(data: PreparedData, cfg: ExperimentConfig, seed: int = 0) -> DecoderModel:
    spatial, net, hist = train_bank_decoder(data.broad, data.labels, data.class_count, cfg,
                                            derive_seed(seed, 0))
    return DecoderModel(net, spatial, "tegnet", {"decoder": hist})


def train_ttsnet(data: PreparedData, cfg: ExperimentConfig, seed: int = 0) -> FusedModel:
    """Stage 1 trains one decoder per bank; stage 2 trains the head on frozen decoder logits."""
    K = data.class_count
    spatial, decoders, hists = [], [], {}
    for f, X in enumerate(data.banks):
        try:
            s, net, hist = train_bank_decoder(X, data.labels, K, cfg, derive_seed(seed, f))
        except ValueError as exc:
            raise TrainingError(f"bank {f}: {exc}") from exc
        spatial.append(s)
        decoders.append(net)
        hists[f"decoder{f}"] = hist
    head_seed = derive_seed(seed, len(data.banks))
    head = classifier_head(K, len(decoders), make_rng(head_seed), dtype=np.float32)
    model = FusedModel(FusedNet(decoders, head), spatial, "ttsnet", hists)
    feats = model.decoder_features(data)
    hists["head"] = train_network(head, feats, data.labels,
                                  _train_cfg(cfg, cfg.stage2_epochs, head_seed, cfg.weight_decay))
    return model


def build_fused(n_components: int, n_samples: int, K: int, n_banks: int, seed: int) -> FusedNet:
    """The TTSNet graph with the same per-bank initialization as stage-1 training."""
    decoders = [_decoder(n_components, n_samples, K, derive_seed(seed, f)) for f in range(n_banks)]
    head = classifier_head(K, n_banks, make_rng(derive_seed(seed, n_banks)), dtype=np.float32)
    return FusedNet(decoders, head)


def train_otsnet(data: PreparedData, cfg: ExperimentConfig, seed: int = 0) -> FusedModel:
    """The TTSNet graph trained jointly end to end by a single optimizer."""
    K = data.class_count
    spatial = [SpatialStage.fit(X, data.labels, K, cfg) for X in data.banks]
    xs = [s.transform(X) for s, X in zip(spatial, data.banks)]
    net = build_fused(xs[0].shape[2], xs[0].shape[3], K, len(xs), seed)
    hist = train_network(net, xs, data.labels,
                         _train_cfg(cfg, cfg.epochs_stage1(K), derive_seed(seed, len(xs)),
                                    cfg.otsnet_weight_decay))
    return FusedModel(net, spatial, "otsnet", {"joint": hist})


TRAINERS = {
    MethodKind.FBTRCA: train_fbtrca,
    MethodKind.EEGNET: train_eegnet,
    MethodKind.TEGNET: train_tegnet,
    MethodKind.OTSNET: train_otsnet,
    MethodKind.TTSNET: train_ttsnet,
}


def train_method(data: PreparedData, cfg: ExperimentConfig, seed: int = 0):
    return TRAINERS[MethodKind(cfg.method)](data, cfg, seed)


def predict(model, data: PreparedData) -> np.ndarray:
    """Class with the largest score; ties go to the lowest class index."""
    return np.argmax(model.scores(data), axis=1)


def model_digest(model) -> str:
    """SHA-256 over every fitted array of a model, in a fixed order."""
    h = hashlib.sha256()
    for name, arr in model.arrays().items():
        arr = np.ascontiguousarray(arr)
        h.update(name.encode())
        h.update(str(arr.dtype).encode() + str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def count_parameters(model) -> int:
    return sum(p.data.size for p in model.net.params)


# ----------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class FoldResult:
    fold: int
    n_train: int
    n_test: int
    accuracy: float


@dataclass
class CvReport:
    folds: list
    method: str
    task: str
    seed: int
    wall_time_s: float = 0.0

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([f.accuracy for f in self.folds])

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    def csv_rows(self) -> list:
        return [("fold", "n_train", "n_test", "accuracy")] + [
            (f.fold, f.n_train, f.n_test, f"{f.accuracy:.6f}") for f in self.folds]

    def summary(self) -> dict:
        return {"method": self.method, "task": self.task, "seed": self.seed,
                "n_folds": len(self.folds), "mean": self.mean, "std": self.std,
                "fold_accuracies": self.accuracies.tolist(), "wall_time_s": self.wall_time_s}


def stratified_folds(labels: np.ndarray, n_folds: int, seed: int) -> list:
    """Seeded stratified split into (train, test) index pairs."""
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    if np.any(counts[counts > 0] < n_folds) or np.count_nonzero(counts) < 2:
        raise InsufficientDataError(
            f"need >= {n_folds} trials in each of >= 2 classes, got counts {counts.tolist()}")
    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return [(tr, te) for tr, te in skf.split(np.zeros(len(labels)), labels)]


def run_cv(epochs: Epochs, cfg: ExperimentConfig, on_fold=None) -> CvReport:
    """Stratified k-fold cross-validation of ``cfg.method``.

    All fitting happens inside :func:`train_method` on the training fold
    only. ``on_fold(fold, model, train_idx, test_idx)`` is called after each
    fold, e.g. to save weights.
    """
    start = time.perf_counter()
    data = prepare(epochs, cfg)
    results = []
    for i, (tr, te) in enumerate(stratified_folds(data.labels, cfg.n_folds, cfg.seed)):
        model = train_method(data.take(tr), cfg, derive_seed(cfg.seed, i))
        acc = float(np.mean(predict(model, data.take(te)) == data.labels[te]))
        results.append(FoldResult(i, len(tr), len(te), acc))
        if on_fold is not None:
            on_fold(i, model, tr, te)
    return CvReport(results, MethodKind(cfg.method).value, task_descriptor(epochs, cfg), cfg.seed,
                    time.perf_counter() - start)

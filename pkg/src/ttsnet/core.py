"""Domain types, seeded random streams and the synthetic MRCP generator."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

# Seed of the channel-mixing matrix shared by every synthetic dataset, so that
# datasets differing only in jitter or noise share the same spatial layout.
MIXING_SEED = 0x5EED_0A11


def make_rng(seed: int) -> np.random.Generator:
    """Return the package-wide random stream for ``seed``.

    Every random draw in the package goes through a PCG64 bit generator
    (a permuted linear congruential generator) seeded with a 64-bit integer,
    which numpy guarantees to produce the same raw stream on every platform.
    """
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class Trial:
    """One epoch of multichannel signal.

    Attributes
    ----------
    data : ndarray, shape (C, T)
        Samples, channel-major.
    fs : float
        Sampling rate in Hz.
    label : int
        Class index.
    onset_sample : int or None
        Movement onset as a sample index into ``data``.
    """

    data: np.ndarray
    fs: float
    label: int
    onset_sample: Optional[int] = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"trial data must be a non-empty (C, T) matrix, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("trial data contains non-finite samples")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        if self.onset_sample is not None and not 0 <= self.onset_sample < data.shape[1]:
            raise ValueError(f"onset_sample {self.onset_sample} outside [0, {data.shape[1]})")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, fs: Optional[float] = None,
                  onset_sample: Optional[int] = -1) -> "Trial":
        """Copy of this trial with new samples (and optionally a new rate/onset)."""
        onset = self.onset_sample if onset_sample == -1 else onset_sample
        return replace(self, data=np.asarray(data),
                       fs=self.fs if fs is None else fs, onset_sample=onset)

    def __eq__(self, other):
        if not isinstance(other, Trial):
            return NotImplemented
        return (self.fs == other.fs and self.label == other.label
                and self.onset_sample == other.onset_sample
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Epochs:
    """A labelled set of trials sharing shape and sampling rate."""

    trials: tuple
    class_count: int
    channel_names: tuple = ()

    def __post_init__(self):
        trials = tuple(self.trials)
        if not trials:
            raise ValueError("Epochs needs at least one trial")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        shape, fs = trials[0].data.shape, trials[0].fs
        for i, tr in enumerate(trials):
            if tr.data.shape != shape or tr.fs != fs:
                raise ValueError(f"trial {i} has shape {tr.data.shape} @ {tr.fs} Hz, "
                                 f"expected {shape} @ {fs} Hz")
            if tr.label >= self.class_count:
                raise ValueError(f"trial {i} label {tr.label} >= class_count {self.class_count}")
        names = tuple(self.channel_names) or tuple(f"ch{i}" for i in range(shape[0]))
        if len(names) != shape[0]:
            raise ValueError(f"{len(names)} channel names for {shape[0]} channels")
        object.__setattr__(self, "trials", trials)
        object.__setattr__(self, "channel_names", names)

    def __len__(self):
        return len(self.trials)

    def __eq__(self, other):
        if not isinstance(other, Epochs):
            return NotImplemented
        return (self.class_count == other.class_count
                and self.channel_names == other.channel_names
                and len(self.trials) == len(other.trials)
                and all(a == b for a, b in zip(self.trials, other.trials)))

    __hash__ = None

    @property
    def fs(self) -> float:
        return self.trials[0].fs

    @property
    def n_channels(self) -> int:
        return self.trials[0].n_channels

    @property
    def n_samples(self) -> int:
        return self.trials[0].n_samples

    @property
    def labels(self) -> np.ndarray:
        return np.array([t.label for t in self.trials], dtype=np.int64)

    def to_array(self, dtype=np.float64) -> np.ndarray:
        """Stack trial data into an (N, C, T) array."""
        return np.stack([t.data for t in self.trials]).astype(dtype, copy=False)

    def subset(self, indices: Sequence[int]) -> "Epochs":
        return replace(self, trials=tuple(self.trials[i] for i in indices))

    def map_trials(self, fn) -> "Epochs":
        return replace(self, trials=tuple(fn(t) for t in self.trials))

    def by_class(self, dtype=np.float64) -> list:
        """Trial arrays grouped by class, in class order: a list of (N_k, C, T) arrays."""
        X, y = self.to_array(dtype), self.labels
        return [X[y == k] for k in range(self.class_count)]

    def with_labels(self, labels: Sequence[int]) -> "Epochs":
        if len(labels) != len(self.trials):
            raise ValueError("one label per trial required")
        return replace(self, trials=tuple(replace(t, label=int(lab))
                                          for t, lab in zip(self.trials, labels)))


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic MRCP dataset.

    Movement classes are labelled ``0 .. K-2`` when ``include_rest`` is set
    (the resting class takes label ``K-1``), otherwise ``0 .. K-1``.
    ``amplitudes`` gives one template peak per movement class; when empty,
    class ``k`` peaks at ``base_amplitude * (1 + 0.3 k)``.
    """

    class_count: int = 2
    trials_per_class: int = 60
    n_channels: int = 11
    n_samples: int = 1280
    fs: float = 256.0
    amplitudes: tuple = ()
    base_amplitude: float = 1.0
    noise_std: float = 0.5
    jitter_max_s: float = 0.0
    include_rest: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if self.trials_per_class < 1 or self.n_channels < 1 or self.n_samples < 1:
            raise ValueError("trials_per_class, n_channels and n_samples must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not self.jitter_max_s * self.fs < self.n_samples / 4:
            raise ValueError("jitter_max_s * fs must be below n_samples / 4")
        n_moving = self.class_count - 1 if self.include_rest else self.class_count
        if self.amplitudes and len(self.amplitudes) != n_moving:
            raise ValueError(f"need {n_moving} amplitudes, got {len(self.amplitudes)}")

    @property
    def movement_classes(self) -> int:
        return self.class_count - 1 if self.include_rest else self.class_count

    def class_amplitude(self, k: int) -> float:
        if self.amplitudes:
            return float(self.amplitudes[k])
        return self.base_amplitude * (1.0 + 0.3 * k)

    @property
    def nominal_onset(self) -> int:
        return int(round(0.6 * self.n_samples))


def raised_cosine(t: np.ndarray, center: float, width: float) -> np.ndarray:
    """Raised-cosine bump of unit peak at ``center`` with support ``width``."""
    u = (t - center) / width
    return np.where(np.abs(u) < 0.5, 0.5 * (1.0 + np.cos(2.0 * np.pi * u)), 0.0)


def mrcp_template(n_samples: int, fs: float, onset: float, amplitude: float) -> np.ndarray:
    """Negative deflection peaking at ``onset`` (in samples) with a smaller later rebound."""
    t = np.arange(n_samples) / fs
    t0 = onset / fs
    return amplitude * (-raised_cosine(t, t0, 1.0) + 0.4 * raised_cosine(t, t0 + 0.75, 1.0))


def mixing_matrix(n_channels: int) -> np.ndarray:
    """Fixed, well-conditioned source-to-channel mixing matrix."""
    rng = make_rng(MIXING_SEED + n_channels)
    return np.eye(n_channels) + 0.3 * rng.standard_normal((n_channels, n_channels)) / np.sqrt(n_channels)


def generate_synthetic(spec: SynthSpec) -> Epochs:
    """Draw a synthetic MRCP dataset.

    Each movement trial carries its class template on source 0 at the nominal
    onset (``0.6 T``) shifted by a uniform jitter, each rest trial carries no
    template. White noise of ``noise_std`` is added to every source and the
    sources are mixed onto the channels by :func:`mixing_matrix`. Output
    samples are float32.
    """
    rng = make_rng(spec.seed)
    C, T, fs = spec.n_channels, spec.n_samples, spec.fs
    mix = mixing_matrix(C)
    max_shift = spec.jitter_max_s * fs
    trials = []
    for label in range(spec.class_count):
        is_rest = spec.include_rest and label == spec.class_count - 1
        for _ in range(spec.trials_per_class):
            shift = 0 if is_rest else int(round(rng.uniform(-1.0, 1.0) * max_shift))
            sources = np.zeros((C, T))
            if spec.noise_std > 0:
                sources += spec.noise_std * rng.standard_normal((C, T))
            onset = spec.nominal_onset + shift
            if not is_rest:
                sources[0] += mrcp_template(T, fs, onset, spec.class_amplitude(label))
            data = (mix @ sources).astype(np.float32)
            trials.append(Trial(data=data, fs=float(fs), label=label, onset_sample=onset))
    names = tuple(f"ch{i}" for i in range(C))
    return Epochs(trials=tuple(trials), class_count=spec.class_count, channel_names=names)

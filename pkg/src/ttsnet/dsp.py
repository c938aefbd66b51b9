"""Resampling, normalization, zero-phase band-pass filtering and filter banks."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy import signal

from .core import Epochs, Trial

BANK_LOW_HZ = 0.5
BANK_HIGH_HZ = tuple(float(h) for h in range(1, 11))
MRCP_BAND = (0.5, 10.0)
FILTER_ORDER = 2
# Kaiser beta for roughly 80 dB of stopband attenuation: 0.1102 * (80 - 8.7)
KAISER_BETA = 7.857


class DegenerateChannelError(ValueError):
    pass


class FilterDesignError(ValueError):
    pass


@dataclass(frozen=True)
class BandSpec:
    low_hz: float
    high_hz: float

    def validate(self, fs: float) -> None:
        if not 0 < self.low_hz < self.high_hz < fs / 2:
            raise FilterDesignError(
                f"band ({self.low_hz}, {self.high_hz}) Hz invalid for fs={fs} Hz")

    def __str__(self):
        return f"{self.low_hz:g}-{self.high_hz:g}Hz"


@dataclass(frozen=True)
class FilterBankSet:
    banks: tuple  # of (BandSpec, Epochs)

    def __len__(self):
        return len(self.banks)

    @property
    def bands(self) -> list:
        return [band for band, _ in self.banks]

    @property
    def epochs(self) -> list:
        return [ep for _, ep in self.banks]


def default_banks() -> list:
    return [BandSpec(BANK_LOW_HZ, h) for h in BANK_HIGH_HZ]


def zscore(trial: Trial) -> Trial:
    """Normalize every channel to zero mean and unit (population) variance."""
    x = trial.data.astype(np.float64)
    mean = x.mean(axis=1, keepdims=True)
    std = x.std(axis=1, keepdims=True)
    bad = np.flatnonzero(~(std[:, 0] > 1e-12 * np.maximum(1.0, np.abs(mean[:, 0]))))
    if bad.size:
        raise DegenerateChannelError(f"channel {bad[0]} has zero variance")
    return trial.with_data((x - mean) / std)


def antialias_fir(up: int, down: int) -> np.ndarray:
    """Kaiser low-pass for an ``up / down`` polyphase resampler.

    Every polyphase branch is scaled to sum to ``1 / up`` so that each output
    phase has exactly unit gain at DC.
    """
    rate = max(up, down)
    half = 10 * rate
    h = signal.firwin(2 * half + 1, 1.0 / rate, window=("kaiser", KAISER_BETA))
    for p in range(up):
        h[p::up] /= h[p::up].sum() * up
    return h


def resample(trial: Trial, target_fs: float) -> Trial:
    """Polyphase resampling to ``target_fs`` with a Kaiser-windowed anti-alias FIR."""
    if target_fs > trial.fs:
        raise ValueError(f"target_fs {target_fs} Hz exceeds source rate {trial.fs} Hz")
    if target_fs == trial.fs:
        return trial.with_data(trial.data.astype(np.float64))
    ratio = Fraction(target_fs / trial.fs).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    y = signal.resample_poly(trial.data.astype(np.float64), up, down, axis=1,
                             window=antialias_fir(up, down), padtype="line")
    n_out = int(round(trial.n_samples * target_fs / trial.fs))
    if y.shape[1] >= n_out:
        y = y[:, :n_out]
    else:
        y = np.pad(y, ((0, 0), (0, n_out - y.shape[1])), mode="edge")
    onset = None
    if trial.onset_sample is not None:
        onset = min(int(round(trial.onset_sample * target_fs / trial.fs)), n_out - 1)
    return trial.with_data(y, fs=float(target_fs), onset_sample=onset)


def design_bandpass(band: BandSpec, fs: float, order: int = FILTER_ORDER) -> np.ndarray:
    band.validate(fs)
    sos = signal.butter(order, [band.low_hz, band.high_hz], btype="bandpass", fs=fs, output="sos")
    poles = np.concatenate([np.roots(s[3:]) for s in sos])
    if not np.all(np.abs(poles) < 1.0 - 1e-12):
        raise FilterDesignError(f"unstable design for {band} at fs={fs} Hz")
    return sos


def bandpass_array(x: np.ndarray, fs: float, band: BandSpec, order: int = FILTER_ORDER) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis.

    The signal is reflect-padded by three times the filter order on each side
    and filtered forward then backward.
    """
    sos = design_bandpass(band, fs, order)
    x = np.asarray(x, dtype=np.float64)
    padlen = min(3 * 2 * order, x.shape[-1] - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=padlen)


def bandpass(trial: Trial, band: BandSpec, order: int = FILTER_ORDER) -> Trial:
    return trial.with_data(bandpass_array(trial.data, trial.fs, band, order))


def bandpass_epochs(epochs: Epochs, band: BandSpec, order: int = FILTER_ORDER) -> Epochs:
    y = bandpass_array(epochs.to_array(), epochs.fs, band, order)
    return Epochs(trials=tuple(t.with_data(y[i]) for i, t in enumerate(epochs.trials)),
                  class_count=epochs.class_count, channel_names=epochs.channel_names)


def divide_filter_banks(epochs: Epochs, bands: Sequence[BandSpec] = None,
                        order: int = FILTER_ORDER) -> FilterBankSet:
    """Cut one band-passed copy of ``epochs`` per bank (default 0.5 Hz to 1..10 Hz)."""
    if epochs.fs < 64:
        raise ValueError(f"filter banks need fs >= 64 Hz, got {epochs.fs}")
    bands = default_banks() if bands is None else list(bands)
    return FilterBankSet(banks=tuple((b, bandpass_epochs(epochs, b, order)) for b in bands))


def preprocess(epochs: Epochs, target_fs: float) -> Epochs:
    """Downsample to ``target_fs`` then z-normalize every trial."""
    return epochs.map_trials(lambda t: zscore(resample(t, target_fs)))


def savgol_smooth(x: np.ndarray, window: int = 31, order: int = 1) -> np.ndarray:
    """Savitzky-Golay smoothing; edge samples come from the edge window's own fit."""
    if window % 2 == 0:
        raise ValueError(f"window must be odd, got {window}")
    if order >= window:
        raise ValueError(f"order {order} must be below window {window}")
    x = np.asarray(x, dtype=np.float64)
    if x.size < window:
        raise ValueError(f"signal of {x.size} samples shorter than window {window}")
    return signal.savgol_filter(x, window, order, mode="interp")

"""Movement-onset localization from limb trajectories and epoch windowing."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Trial
from .dsp import savgol_smooth

SMOOTH_WINDOW = 31
SMOOTH_ORDER = 1
ELBOW_THRESHOLD = 0.05
DISTAL_LEVEL = 0.1
REST_ONSET_S = 2.5
REST_MIN_VARIANCE = 0.02
MIN_AMPLITUDE = 0.05
MAX_WIDTH = 100.0
MAX_OFFSET = 10.0


class MotionKind(str, enum.Enum):
    ELBOW = "elbow"
    DISTAL = "distal"
    REST = "rest"


class Reason(str, enum.Enum):
    NONE = "none"
    NO_CROSSING = "no-crossing"
    LOW_VARIANCE = "low-variance"
    AMPLITUDE_TOO_SMALL = "amplitude-too-small"
    WIDTH_TOO_LARGE = "width-too-large"
    OFFSET_TOO_LARGE = "offset-too-large"
    FIT_FAILED = "fit-failed"
    DEGENERATE = "degenerate-trajectory"


class DegenerateTrajectoryError(ValueError):
    pass


class FitError(RuntimeError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryTrial:
    trajectory: np.ndarray
    fs: float
    motion_kind: MotionKind

    def __post_init__(self):
        traj = np.asarray(self.trajectory, dtype=np.float64)
        if traj.ndim != 1 or traj.size < SMOOTH_WINDOW:
            raise ValueError(f"trajectory needs >= {SMOOTH_WINDOW} samples")
        if not np.all(np.isfinite(traj)):
            raise ValueError("trajectory contains non-finite samples")
        object.__setattr__(self, "trajectory", traj)
        object.__setattr__(self, "motion_kind", MotionKind(self.motion_kind))


@dataclass(frozen=True)
class GaussFitParams:
    """Parameters of ``a * exp(-((x - b) / c)**2) + d``; ``c`` is kept positive."""

    a: float
    b: float
    c: float
    d: float

    def __call__(self, x):
        return self.a * np.exp(-((np.asarray(x, dtype=np.float64) - self.b) / self.c) ** 2) + self.d


@dataclass
class GaussFit:
    params: GaussFitParams
    residual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    degenerate: bool = False

    @property
    def residual(self) -> float:
        return self.residual_history[-1]


@dataclass(frozen=True)
class OnsetResult:
    onset_sample: Optional[int]
    rejected: bool = False
    reason: Reason = Reason.NONE

    def __post_init__(self):
        if self.rejected and self.onset_sample is not None:
            raise ValueError("a rejected trial carries no onset")

    @classmethod
    def reject(cls, reason: Reason) -> "OnsetResult":
        return cls(None, True, reason)


def preprocess_trajectory(t: TrajectoryTrial) -> np.ndarray:
    """Smoothed first difference scaled to unit maximum magnitude.

    Index ``i`` of the result corresponds to the step from trajectory sample
    ``i`` to ``i + 1``.
    """
    if t.trajectory.size < SMOOTH_WINDOW + 1:
        raise ValueError(f"trajectory needs >= {SMOOTH_WINDOW + 1} samples")
    diff = np.diff(t.trajectory)
    if not np.any(diff):
        raise DegenerateTrajectoryError("trajectory is constant")
    smooth = savgol_smooth(diff, SMOOTH_WINDOW, SMOOTH_ORDER)
    peak = np.max(np.abs(smooth))
    if peak == 0:
        raise DegenerateTrajectoryError("smoothed trajectory difference is zero")
    return smooth / peak


def locate_onset_threshold(norm_traj: np.ndarray, threshold: float = ELBOW_THRESHOLD) -> OnsetResult:
    """First index whose value reaches ``threshold``."""
    hits = np.flatnonzero(np.asarray(norm_traj) >= threshold)
    if hits.size == 0:
        return OnsetResult.reject(Reason.NO_CROSSING)
    return OnsetResult(int(hits[0]))


def _gauss_residuals_jacobian(p, x, y):
    a, b, c, d = p
    u = (x - b) / c
    e = np.exp(-u * u)
    r = a * e + d - y
    J = np.empty((x.size, 4))
    J[:, 0] = e
    J[:, 1] = a * e * 2 * u / c
    J[:, 2] = a * e * 2 * u * u / c
    J[:, 3] = 1.0
    return r, J


def fit_gaussian(y: np.ndarray, max_iter: int = 200, tol: float = 1e-10) -> GaussFit:
    """Levenberg-Marquardt fit of a Gaussian bump plus offset.

    Starts from ``a = max - min``, ``b = argmax``, ``c = n / 10``,
    ``d = min``. A step is accepted only if it lowers the residual norm, so
    ``residual_history`` never increases. Converges when the accepted
    parameter update is below ``tol`` relative to the parameters.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size < 4:
        raise ValueError("need at least 4 samples")
    x = np.arange(y.size, dtype=np.float64)
    lo, hi = float(y.min()), float(y.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return GaussFit(GaussFitParams(0.0, float(np.argmax(y)), y.size / 10.0, lo),
                        [0.0], 0, True, degenerate=True)
    p = np.array([hi - lo, float(np.argmax(y)), y.size / 10.0, lo])
    r, J = _gauss_residuals_jacobian(p, x, y)
    cost = float(r @ r)
    history = [np.sqrt(cost)]
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        while True:
            step = np.linalg.solve(A + lam * np.diag(np.maximum(np.diag(A), 1e-12)), -g)
            p_new = p + step
            if p_new[2] == 0:
                lam *= 10
                continue
            r_new, J_new = _gauss_residuals_jacobian(p_new, x, y)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                break
            lam *= 10
            if lam > 1e16:
                break
        if lam > 1e16:
            converged = np.linalg.norm(g) < 1e-12 * max(1.0, cost)
            break
        small = np.linalg.norm(step) <= tol * (np.linalg.norm(p) + tol)
        p, r, J, cost = p_new, r_new, J_new, cost_new
        history.append(np.sqrt(cost))
        lam = max(lam / 10, 1e-12)
        if small or cost == 0:
            converged = True
            break
    if not converged:
        raise FitError(f"Gaussian fit did not converge in {max_iter} iterations")
    a, b, c, d = p
    return GaussFit(GaussFitParams(float(a), float(b), float(abs(c)), float(d)),
                    history, it, converged)


def gauss_rejection(params: GaussFitParams) -> Reason:
    """Rejection cause for a fitted distal-motion curve (``Reason.NONE`` if kept)."""
    if params.a < MIN_AMPLITUDE:
        return Reason.AMPLITUDE_TOO_SMALL
    if params.c > MAX_WIDTH:
        return Reason.WIDTH_TOO_LARGE
    if params.d > MAX_OFFSET:
        return Reason.OFFSET_TOO_LARGE
    return Reason.NONE


def gauss_onset(params: GaussFitParams, level: float = DISTAL_LEVEL) -> int:
    """First integer index where the fitted curve has risen by ``level * a`` above ``d``."""
    x = params.b - params.c * np.sqrt(np.log(1.0 / level))
    return max(int(np.ceil(x - 1e-9)), 0)


def locate_onset(t: TrajectoryTrial, reject_low_variance_rest: bool = True) -> OnsetResult:
    """Onset of one trial according to its motion kind.

    Rest trials get a fixed onset 2.5 s into the trial and are rejected when
    their normalized trajectory has variance below 0.02 (switchable). Elbow
    trials use the 0.05 threshold crossing. Distal trials are fitted with a
    Gaussian and rejected when ``a < 0.05``, ``c > 100`` or ``d > 10``.
    """
    if t.motion_kind is MotionKind.REST:
        onset = int(round(REST_ONSET_S * t.fs))
        if reject_low_variance_rest:
            try:
                norm = preprocess_trajectory(t)
            except DegenerateTrajectoryError:
                return OnsetResult.reject(Reason.LOW_VARIANCE)
            if np.var(norm) < REST_MIN_VARIANCE:
                return OnsetResult.reject(Reason.LOW_VARIANCE)
        if onset >= t.trajectory.size:
            return OnsetResult.reject(Reason.NO_CROSSING)
        return OnsetResult(onset)
    try:
        norm = preprocess_trajectory(t)
    except DegenerateTrajectoryError:
        return OnsetResult.reject(Reason.DEGENERATE)
    if t.motion_kind is MotionKind.ELBOW:
        return locate_onset_threshold(norm, ELBOW_THRESHOLD)
    try:
        fit = fit_gaussian(norm)
    except (FitError, np.linalg.LinAlgError):
        return OnsetResult.reject(Reason.FIT_FAILED)
    if fit.degenerate:
        return OnsetResult.reject(Reason.AMPLITUDE_TOO_SMALL)
    reason = gauss_rejection(fit.params)
    if reason is not Reason.NONE:
        return OnsetResult.reject(reason)
    onset = gauss_onset(fit.params)
    if onset >= norm.size:
        return OnsetResult.reject(Reason.NO_CROSSING)
    return OnsetResult(onset)


WINDOWS = {
    "aligned": (-2.0, 1.0),
    "cue_I": (-1.0, 2.0),
    "cue_II": (0.0, 2.0),
}


def window_bounds(mode: str, reference: int, fs: float):
    try:
        before, after = WINDOWS[mode]
    except KeyError:
        raise ValueError(f"unknown window mode {mode!r}; expected one of {sorted(WINDOWS)}") from None
    return reference + int(round(before * fs)), reference + int(round(after * fs))


def extract_window(trial: Trial, mode: str, cue_sample: Optional[int] = None) -> Trial:
    """Cut a window around the onset (``aligned``) or around ``cue_sample``.

    ``aligned``: 2 s before to 1 s after the onset; ``cue_I``: 1 s before to
    2 s after the cue; ``cue_II``: 2 s from the cue. The returned trial's
    onset is re-expressed relative to the window (None if it falls outside).
    """
    if mode == "aligned":
        if trial.onset_sample is None:
            raise ValueError("aligned window needs a trial onset")
        ref = trial.onset_sample
    else:
        if cue_sample is None:
            raise ValueError(f"{mode} window needs a cue sample")
        ref = cue_sample
    start, stop = window_bounds(mode, ref, trial.fs)
    if start < 0 or stop > trial.n_samples:
        raise WindowError(f"window [{start}, {stop}) outside trial of {trial.n_samples} samples")
    onset = None
    if trial.onset_sample is not None and start <= trial.onset_sample < stop:
        onset = trial.onset_sample - start
    return trial.with_data(trial.data[:, start:stop], onset_sample=onset)

"""Central finite-difference checks of every layer and composed network."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .layers import (AvgPool2d, BatchNorm2d, Conv2d, Dropout, ELU, Flatten, Linear, ReLU,
                     ZeroPad2d)
from .nets import FusedNet, classifier_head, temporal_decoder

LAYER_TOL = 1e-4
COMPOSED_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def gradient_check(module, x, training=False, eps=1e-5, seed=0, check_input=True) -> dict:
    """Compare analytic and central-difference gradients of ``sum(module(x) * R)``.

    Returns relative errors keyed by ``"input"`` and by parameter name.
    """
    rng = np.random.default_rng(seed)
    fused = isinstance(x, (list, tuple))
    xs = [np.array(a, dtype=np.float64) for a in _as_list(x)]
    arg = (lambda: xs) if fused else (lambda: xs[0])
    y = module.forward(arg(), training)
    proj = rng.standard_normal(y.shape)

    def loss():
        return float(np.sum(module.forward(arg(), training) * proj))

    params = list(module.named_params()) if hasattr(module, "named_params") else \
        [(f"{i}.{p.name}", p) for i, p in enumerate(module.params)]
    for _, p in params:
        p.zero_grad()
    module.forward(arg(), training)
    dx = module.backward(proj, need_dx=True) if check_input else None
    if not check_input:
        module.backward(proj, need_dx=False)
    analytic = {name: p.grad.copy() for name, p in params}

    def numeric(arr):
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = loss()
            flat[i] = old - eps
            down = loss()
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        return g

    errors = {}
    if check_input:
        dxs = _as_list(dx)
        errors["input"] = max(rel_error(a, numeric(b)) for a, b in zip(dxs, xs))
    for name, p in params:
        errors[name] = rel_error(analytic[name], numeric(p.data))
    return errors


def _randomize_bn(layer, rng):
    layer.gamma.data = rng.uniform(0.5, 1.5, layer.ch)
    layer.beta.data = rng.normal(0, 0.5, layer.ch)
    layer.running_mean = rng.normal(0, 0.5, layer.ch)
    layer.running_var = rng.uniform(0.5, 2.0, layer.ch)
    return layer


def layer_cases(rng):
    """(name, layer, input, training) for every layer type of the two networks."""
    f64 = np.float64
    x4 = lambda *s: rng.standard_normal(s)
    cases = [
        ("ZeroPad2d(31,32)", ZeroPad2d(31, 32, 0, 0), x4(2, 1, 3, 10), False),
        ("ZeroPad2d(7,8)", ZeroPad2d(7, 8, 0, 0), x4(2, 2, 1, 6), False),
        ("Conv2d(1,64) fft", Conv2d(1, 8, (1, 64), rng=rng, dtype=f64), x4(2, 1, 3, 70), False),
        ("Conv2d(1,64) im2col", Conv2d(1, 8, (1, 64), rng=rng, dtype=f64, strategy="im2col"),
         x4(2, 1, 3, 70), False),
        ("Conv2d(C,1) grouped", Conv2d(8, 16, (3, 1), groups=8, rng=rng, dtype=f64),
         x4(2, 8, 3, 9), False),
        ("Conv2d(C,1) grouped im2col", Conv2d(8, 16, (3, 1), groups=8, rng=rng, dtype=f64,
                                              strategy="im2col"), x4(2, 8, 3, 9), False),
        ("Conv2d(1,16) depthwise", Conv2d(16, 16, (1, 16), groups=16, rng=rng, dtype=f64),
         x4(2, 16, 1, 20), False),
        ("Conv2d(1,16) depthwise im2col", Conv2d(16, 16, (1, 16), groups=16, rng=rng, dtype=f64,
                                                 strategy="im2col"), x4(2, 16, 1, 20), False),
        ("Conv2d(1,1)", Conv2d(16, 16, (1, 1), rng=rng, dtype=f64), x4(2, 16, 1, 5), False),
        ("BatchNorm2d frozen", _randomize_bn(BatchNorm2d(4), rng), x4(3, 4, 2, 5), False),
        ("BatchNorm2d batch-stats", _randomize_bn(BatchNorm2d(4), rng), x4(3, 4, 2, 5), True),
        ("ELU", ELU(), x4(2, 3, 2, 7), False),
        ("AvgPool2d(1,4)", AvgPool2d(4), x4(2, 3, 1, 18), False),
        ("AvgPool2d(1,8)", AvgPool2d(8), x4(2, 3, 1, 21), False),
        ("Dropout(off)", Dropout(0.25), x4(2, 3, 1, 8), False),
        ("Flatten", Flatten(), x4(2, 3, 1, 4), False),
        ("Linear", Linear(12, 5, rng=rng, dtype=f64), rng.standard_normal((3, 12)), False),
        ("ReLU", ReLU(), rng.standard_normal((3, 12)), False),
    ]
    return cases


def _frozen_decoder(C, T, K, rng):
    net = temporal_decoder(C, T, K, rng, dtype=np.float64)
    for layer in net.layers:
        if isinstance(layer, BatchNorm2d):
            _randomize_bn(layer, rng)
    return net


def run_suite(seed: int = 0) -> list:
    """Run every check; returns a list of :class:`CheckResult`."""
    rng = np.random.default_rng(seed)
    results = []
    for name, layer, x, training in layer_cases(rng):
        errs = gradient_check(layer, x, training=training, seed=seed)
        results.append(CheckResult(name, max(errs.values()), LAYER_TOL))
    for training in (False, True):
        front = _frozen_decoder(4, 40, 2, rng).front
        errs = gradient_check(front, rng.standard_normal((3, 1, 4, 40)), training=training, seed=seed)
        mode = "batch-stats" if training else "frozen"
        results.append(CheckResult(f"FusedFront {mode}", max(errs.values()), LAYER_TOL))
    for fused in (True, False):
        decoder = _frozen_decoder(3, 64, 2, rng)
        decoder.fused = fused
        errs = gradient_check(decoder, rng.standard_normal((2, 1, 3, 64)), seed=seed)
        path = "fused" if fused else "layer-by-layer"
        results.append(CheckResult(f"TemporalDecoder ({path})", max(errs.values()), COMPOSED_TOL))
    head = classifier_head(2, 3, rng, dtype=np.float64)
    errs = gradient_check(head, rng.standard_normal((4, 2, 3)), seed=seed)
    results.append(CheckResult("ClassifierHead (composed)", max(errs.values()), COMPOSED_TOL))
    fused = FusedNet([_frozen_decoder(2, 32, 2, rng) for _ in range(2)],
                     classifier_head(2, 2, rng, dtype=np.float64))
    xs = [rng.standard_normal((2, 1, 2, 32)) for _ in range(2)]
    errs = gradient_check(fused, xs, seed=seed)
    results.append(CheckResult("FusedNet (composed)", max(errs.values()), COMPOSED_TOL))
    return results


def main_report(seed: int = 0):
    start = time.perf_counter()
    results = run_suite(seed)
    return results, time.perf_counter() - start

"""Layers with explicit forward/backward passes over (B, ch, H, W) numpy arrays.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into ``Parameter.grad`` during ``backward``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sfft


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN/Inf."""


class ShapeError(ValueError):
    pass


class Parameter:
    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def all_finite(a: np.ndarray) -> bool:
    """True when every entry is finite; a single reduction in the common case."""
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(a.sum()):
            return True
    return bool(np.all(np.isfinite(a)))


def _uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    params: tuple = ()
    name = "layer"

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        raise NotImplementedError

    def output_shape(self, shape: tuple) -> tuple:
        raise NotImplementedError

    def astype(self, dtype):
        for p in self.params:
            p.data = p.data.astype(dtype)
            p.grad = np.zeros_like(p.data)
        return self

    def __repr__(self):
        return self.name


class ZeroPad2d(Layer):
    """Zero padding given as (left, right, top, bottom)."""

    def __init__(self, left, right, top=0, bottom=0):
        self.pad = (left, right, top, bottom)
        self.name = f"ZeroPad2d{self.pad}"

    def output_shape(self, shape):
        B, ch, H, W = shape
        l, r, t, b = self.pad
        return (B, ch, H + t + b, W + l + r)

    def forward(self, x, training=False):
        l, r, t, b = self.pad
        self._shape = x.shape
        return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)))

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        l, r, t, b = self.pad
        H, W = self._shape[2:]
        return dy[:, :, t:t + H, l:l + W]


class Conv2d(Layer):
    """Bias-free 2-D cross-correlation without padding, optionally grouped.

    ``strategy`` picks the kernel: ``"auto"`` uses an FFT for single-input
    temporal convolutions, a batched matmul for kernels spanning the full
    input height with width 1, a tap loop for depthwise row kernels, and
    im2col otherwise. ``"im2col"`` forces the generic path.
    """

    def __init__(self, in_ch, out_ch, kernel, groups=1, rng=None, dtype=np.float64,
                 name=None, strategy="auto"):
        if in_ch % groups or out_ch % groups:
            raise ShapeError(f"channels {in_ch}->{out_ch} not divisible by groups={groups}")
        self.in_ch, self.out_ch, self.kernel, self.groups = in_ch, out_ch, tuple(kernel), groups
        self.strategy = strategy
        kh, kw = self.kernel
        fan_in = in_ch // groups * kh * kw
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = Parameter("weight", _uniform(rng, (out_ch, in_ch // groups, kh, kw), fan_in, dtype))
        self.params = (self.weight,)
        self.name = name or f"Conv2d({in_ch}->{out_ch}, {self.kernel}, groups={groups})"

    def output_shape(self, shape):
        B, ch, H, W = shape
        kh, kw = self.kernel
        if len(shape) != 4 or ch != self.in_ch or H < kh or W < kw:
            raise ShapeError(f"{self.name} cannot take input {shape}")
        return (B, self.out_ch, H - kh + 1, W - kw + 1)

    def _pick(self, shape):
        if self.strategy != "auto":
            return self.strategy
        kh, kw = self.kernel
        if self.in_ch == 1 and kh == 1 and kw >= 32:
            return "fft"
        if kw == 1 and kh == shape[2]:
            return "column"
        if kh == 1 and self.groups == self.in_ch == self.out_ch:
            return "depthwise"
        return "im2col"

    def forward(self, x, training=False):
        out_shape = self.output_shape(x.shape)
        self._path = self._pick(x.shape)
        self._xshape = x.shape
        return getattr(self, f"_fwd_{self._path}")(x, out_shape)

    def backward(self, dy, need_dx=True):
        return getattr(self, f"_bwd_{self._path}")(dy, need_dx)

    # generic im2col
    def _fwd_im2col(self, x, out_shape):
        B, _, H, W = x.shape
        _, _, Ho, Wo = out_shape
        G, kh, kw = self.groups, *self.kernel
        cg, og = self.in_ch // G, self.out_ch // G
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B, Cin, Ho, Wo, kh, kw
        cols = (win.reshape(B, G, cg, Ho, Wo, kh, kw)
                   .transpose(1, 0, 3, 4, 2, 5, 6)
                   .reshape(G, B * Ho * Wo, cg * kh * kw))
        w = self.weight.data.reshape(G, og, cg * kh * kw)
        out = np.matmul(cols, w.transpose(0, 2, 1))  # G, B*Ho*Wo, og
        self._cols = cols
        out = out.reshape(G, B, Ho, Wo, og).transpose(1, 0, 4, 2, 3)
        return np.ascontiguousarray(out).reshape(out_shape)

    def _bwd_im2col(self, dy, need_dx):
        cols, xshape = self._cols, self._xshape
        B, _, H, W = xshape
        _, _, Ho, Wo = dy.shape
        G, kh, kw = self.groups, *self.kernel
        cg, og = self.in_ch // G, self.out_ch // G
        dyr = dy.reshape(B, G, og, Ho, Wo).transpose(1, 0, 3, 4, 2).reshape(G, B * Ho * Wo, og)
        dw = np.matmul(cols.transpose(0, 2, 1), dyr)  # G, cg*kh*kw, og
        self.weight.grad += dw.transpose(0, 2, 1).reshape(self.weight.data.shape)
        if not need_dx:
            return None
        w = self.weight.data.reshape(G, og, cg * kh * kw)
        dcols = np.matmul(dyr, w).reshape(G, B, Ho, Wo, cg, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6)
        dx = np.zeros((B, G, cg, H, W), dtype=dy.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, :, i:i + Ho, j:j + Wo] += dcols[..., i, j]
        return dx.reshape(xshape)

    # single input channel, one-row kernel: correlation in the frequency domain
    def _fwd_fft(self, x, out_shape):
        W = x.shape[3]
        n = sfft.next_fast_len(W, real=True)
        w = self.weight.data[:, 0, 0, :]  # O, kw
        xf = sfft.rfft(x, n=n, axis=-1)  # B, 1, H, nf
        wf = sfft.rfft(w, n=n, axis=-1)
        out = sfft.irfft(xf * np.conj(wf)[None, :, None, :], n=n, axis=-1)[..., :out_shape[3]]
        self._fft = (xf, wf, n)
        return np.ascontiguousarray(out, dtype=x.dtype)

    def _bwd_fft(self, dy, need_dx):
        xf, wf, n = self._fft
        kw = self.kernel[1]
        dyf = sfft.rfft(dy, n=n, axis=-1)  # B, O, H, nf
        cross = (np.conj(dyf) * xf).sum(axis=(0, 2))  # O, nf
        dw = sfft.irfft(cross, n=n, axis=-1)[:, :kw]
        self.weight.grad += dw[:, None, None, :].astype(dy.dtype)
        if not need_dx:
            return None
        dxf = (dyf * wf[None, :, None, :]).sum(axis=1, keepdims=True)
        return np.ascontiguousarray(sfft.irfft(dxf, n=n, axis=-1)[..., :self._xshape[3]], dtype=dy.dtype)

    # kernel covering the whole input height with width 1: batched matmul per group
    def _fwd_column(self, x, out_shape):
        B, _, H, W = x.shape
        G = self.groups
        cg, og = self.in_ch // G, self.out_ch // G
        xg = x.reshape(B, G, cg * H, W)
        self._x = xg
        w = self.weight.data.reshape(G, og, cg * H)
        return np.matmul(w[None], xg).reshape(out_shape)

    def _bwd_column(self, dy, need_dx):
        B = dy.shape[0]
        G = self.groups
        og = self.out_ch // G
        dyg = dy.reshape(B, G, og, -1)
        dw = np.matmul(dyg, self._x.transpose(0, 1, 3, 2)).sum(axis=0)  # G, og, cg*H
        self.weight.grad += dw.reshape(self.weight.data.shape)
        if not need_dx:
            return None
        w = self.weight.data.reshape(G, og, -1)
        return np.matmul(w.transpose(0, 2, 1)[None], dyg).reshape(self._xshape)

    # depthwise one-row kernel: loop over taps
    def _fwd_depthwise(self, x, out_shape):
        Wo = out_shape[3]
        w = self.weight.data[:, 0, 0, :]  # C, kw
        out = np.zeros(out_shape, dtype=x.dtype)
        for j in range(self.kernel[1]):
            out += w[None, :, None, j:j + 1] * x[..., j:j + Wo]
        self._x = x
        return out

    def _bwd_depthwise(self, dy, need_dx):
        x = self._x
        Wo = dy.shape[3]
        kw = self.kernel[1]
        win = sliding_window_view(x, kw, axis=3)
        self.weight.grad[:, 0, 0, :] += np.einsum("bchw,bchwk->ck", dy, win)
        if not need_dx:
            return None
        w = self.weight.data[:, 0, 0, :]
        dx = np.zeros(self._xshape, dtype=dy.dtype)
        for j in range(kw):
            dx[..., j:j + Wo] += w[None, :, None, j:j + 1] * dy
        return dx


class BatchNorm2d(Layer):
    """Per-channel batch normalization with affine scale/shift and running statistics."""

    def __init__(self, ch, eps=1e-5, momentum=0.1, dtype=np.float64):
        self.ch, self.eps, self.momentum = ch, eps, momentum
        self.gamma = Parameter("gamma", np.ones(ch, dtype=dtype))
        self.beta = Parameter("beta", np.zeros(ch, dtype=dtype))
        self.params = (self.gamma, self.beta)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self.name = f"BatchNorm2d({ch})"

    def astype(self, dtype):
        super().astype(dtype)
        self.running_mean = self.running_mean.astype(dtype)
        self.running_var = self.running_var.astype(dtype)
        return self

    def output_shape(self, shape):
        if shape[1] != self.ch:
            raise ShapeError(f"{self.name} cannot take input {shape}")
        return shape

    def forward(self, x, training=False):
        if training:
            n = x.size // self.ch
            mean = x.sum(axis=(0, 2, 3)) / n
            xc = x - mean[None, :, None, None]
            var = np.einsum("bchw,bchw->c", xc, xc) / n
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mean
            unbiased = var * (n / (n - 1)) if n > 1 else var
            self.running_var = (1 - m) * self.running_var + m * unbiased
        else:
            xc = x - self.running_mean[None, :, None, None]
            var = self.running_var
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = xc * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, training)
        return xhat * self.gamma.data[None, :, None, None] + self.beta.data[None, :, None, None]

    def backward(self, dy, need_dx=True):
        xhat, inv_std, training = self._cache
        dgamma = np.einsum("bchw,bchw->c", dy, xhat)
        dbeta = dy.sum(axis=(0, 2, 3))
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        if not need_dx:
            return None
        scale = (self.gamma.data * inv_std)[None, :, None, None]
        if not training:
            return dy * scale
        n = dy.size // self.ch
        return (dy - (dbeta / n)[None, :, None, None]
                - xhat * (dgamma / n)[None, :, None, None]) * scale


class ELU(Layer):
    name = "ELU"

    def output_shape(self, shape):
        return shape

    def forward(self, x, training=False):
        # expm1(x) >= x for x <= 0, so the max picks the right branch everywhere
        y = np.maximum(x, np.expm1(np.minimum(x, 0)))
        self._y = y
        return y

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        return dy * (np.minimum(self._y, 0) + 1)


class ReLU(Layer):
    name = "ReLU"

    def output_shape(self, shape):
        return shape

    def forward(self, x, training=False):
        self._mask = (x > 0).astype(x.dtype)
        return x * self._mask

    def backward(self, dy, need_dx=True):
        return dy * self._mask if need_dx else None


class AvgPool2d(Layer):
    """Average pooling over (1, k) windows with stride k; trailing samples are dropped."""

    def __init__(self, k):
        self.k = k
        self.name = f"AvgPool2d(1, {k})"

    def output_shape(self, shape):
        B, ch, H, W = shape
        if W < self.k:
            raise ShapeError(f"{self.name} cannot take input {shape}")
        return (B, ch, H, W // self.k)

    def forward(self, x, training=False):
        B, ch, H, W = x.shape
        k = self.k
        Wo = W // k
        self._W = W
        out = x[..., 0:Wo * k:k].copy()
        for j in range(1, k):
            out += x[..., j:Wo * k:k]
        return out * x.dtype.type(1.0 / k)

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        dx = np.repeat(dy / self.k, self.k, axis=-1)
        if dx.shape[-1] < self._W:
            dx = np.pad(dx, ((0, 0), (0, 0), (0, 0), (0, self._W - dx.shape[-1])))
        return dx


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, p, rng=None):
        self.p = p
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.name = f"Dropout({p})"

    def output_shape(self, shape):
        return shape

    def forward(self, x, training=False):
        if not training or self.p == 0:
            self._mask = None
            return x
        keep = 1.0 - self.p
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)
        return x * self._mask

    def backward(self, dy, need_dx=True):
        if not need_dx:
            return None
        return dy if self._mask is None else dy * self._mask


class Flatten(Layer):
    name = "Flatten"

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, need_dx=True):
        return dy.reshape(self._shape) if need_dx else None


class Linear(Layer):
    """Bias-free dense layer, ``y = x W^T``."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float64):
        self.n_in, self.n_out = n_in, n_out
        rng = np.random.default_rng(0) if rng is None else rng
        self.weight = Parameter("weight", _uniform(rng, (n_out, n_in), n_in, dtype))
        self.params = (self.weight,)
        self.name = f"Linear({n_in}->{n_out}, bias=False)"

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.n_in:
            raise ShapeError(f"{self.name} cannot take input {shape}")
        return (shape[0], self.n_out)

    def forward(self, x, training=False):
        self._x = x
        # a per-row reduction rather than gemm, so a row's output never depends
        # on which other rows share its batch
        return np.einsum("bi,oi->bo", x, self.weight.data, optimize=False)

    def backward(self, dy, need_dx=True):
        self.weight.grad += dy.T @ self._x
        return dy @ self.weight.data if need_dx else None


class Sequential(Layer):
    def __init__(self, layers, name="Sequential"):
        self.layers = list(layers)
        self.name = name

    @property
    def params(self):
        return tuple(p for layer in self.layers for p in layer.params)

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for p in layer.params:
                yield f"{i}.{p.name}", p

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def output_shape(self, shape):
        return self.shapes(shape)[-1]

    def shapes(self, shape):
        """Input shape followed by the output shape of every layer."""
        out = [tuple(shape)]
        for i, layer in enumerate(self.layers):
            try:
                out.append(layer.output_shape(out[-1]))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}): {exc}") from exc
        return out

    def stages(self):
        """(label, layer) pairs executed by forward and backward."""
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, training=False):
        for i, layer in self.stages():
            try:
                x = layer.forward(x, training)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.name}): {exc}") from exc
            if not all_finite(x):
                raise NonFiniteError(f"non-finite activation after layer {i} ({layer.name})")
        return x

    def backward(self, dy, need_dx=True):
        # Without an input gradient, stop at the first layer holding parameters.
        stages = self.stages()
        first = next((j for j, (_, layer) in enumerate(stages) if layer.params), 0)
        stop = 0 if need_dx else first
        for j in range(len(stages) - 1, stop - 1, -1):
            i, layer = stages[j]
            dy = layer.backward(dy, need_dx=need_dx or j > stop)
            for p in layer.params:
                if not all_finite(p.grad):
                    raise NonFiniteError(f"non-finite gradient in layer {i} ({layer.name}) {p.name}")
        return dy if need_dx else None

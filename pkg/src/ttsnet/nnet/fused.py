"""Fused evaluation of the decoder's front end.

The first four decoder layers, zero padding, a single-input temporal
convolution, batch normalization and a grouped convolution spanning the full
input height, are all linear or per-channel affine. They can therefore be
reordered exactly: mix the input rows first, then convolve the few mixed
signals in time. The batch-norm statistics of the (never materialized)
temporal-conv output follow from the window moments of the input::

    mean_f = w_f . m          var_f = w_f^T R w_f - mean_f**2

where ``m`` holds the mean of every kernel-length input window and ``R`` their
second-moment matrix. The result equals the layer-by-layer computation up to
rounding while touching an activation 8 H / 16 times smaller.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy import fft as sfft

from .layers import BatchNorm2d, Conv2d, Layer, ShapeError, ZeroPad2d


def window_moments(xp: np.ndarray, k: int, n_out: int):
    """Mean vector ``m`` (k) and second moments ``R`` (k x k) of length-``k`` windows.

    ``xp`` is (rows, length); windows start at ``0 .. n_out - 1`` of every row.
    """
    X = xp.astype(np.float64)
    n = X.shape[0] * n_out
    cs = np.concatenate([[0.0], np.cumsum(X.sum(axis=0))])
    m = (cs[n_out:n_out + k] - cs[:k]) / n
    M = X.T @ X
    s0, s1 = M.strides
    blocks = as_strided(M, shape=(n_out, k, k), strides=(s0 + s1, s0, s1), writeable=False)
    return m, blocks.sum(axis=0) / n


class FusedFront(Layer):
    """Exact fused ZeroPad2d -> Conv2d(1->F, (1, K)) -> BatchNorm2d(F) -> Conv2d(F->O, (H, 1), groups=F)."""

    def __init__(self, pad: ZeroPad2d, temporal: Conv2d, norm: BatchNorm2d, spatial: Conv2d):
        if temporal.in_ch != 1 or temporal.kernel[0] != 1 or spatial.kernel[1] != 1 \
                or spatial.groups != temporal.out_ch or pad.pad[2:] != (0, 0):
            raise ShapeError("layers do not form a fusable front end")
        self.pad, self.temporal, self.norm, self.spatial = pad, temporal, norm, spatial
        self.name = "FusedFront"

    @property
    def params(self):
        return self.temporal.params + self.norm.params + self.spatial.params

    def output_shape(self, shape):
        for layer in (self.pad, self.temporal, self.norm, self.spatial):
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, training=False):
        out_shape = self.output_shape(x.shape)
        B, _, H, T = x.shape
        F, K = self.temporal.out_ch, self.temporal.kernel[1]
        O = self.spatial.out_ch
        grp = np.arange(O) // (O // F)
        l, r = self.pad.pad[:2]
        xp = np.pad(x[:, 0], ((0, 0), (0, 0), (l, r)))  # B, H, Tp
        Tp = xp.shape[-1]
        Tout = out_shape[3]
        w1 = self.temporal.weight.data[:, 0, 0, :]  # F, K
        w2 = self.spatial.weight.data[:, 0, :, 0]  # O, H
        v = np.matmul(w2[None], xp)  # B, O, Tp
        n = sfft.next_fast_len(Tp, real=True)
        vf = sfft.rfft(v, n=n, axis=-1)
        wf = sfft.rfft(w1, n=n, axis=-1)[grp]  # O, nf
        y = sfft.irfft(vf * np.conj(wf)[None], n=n, axis=-1)[..., :Tout].astype(x.dtype)
        bn = self.norm
        if training:
            m, R = window_moments(xp.reshape(B * H, Tp), K, Tout)
            w64 = w1.astype(np.float64)
            mean = w64 @ m
            var = np.maximum(np.einsum("fk,kl,fl->f", w64, R, w64) - mean * mean, 0.0)
            count = B * H * Tout
            mom = bn.momentum
            unbiased = var * (count / (count - 1)) if count > 1 else var
            bn.running_mean = ((1 - mom) * bn.running_mean + mom * mean).astype(bn.running_mean.dtype)
            bn.running_var = ((1 - mom) * bn.running_var + mom * unbiased).astype(bn.running_var.dtype)
        else:
            m = R = None
            mean = bn.running_mean.astype(np.float64)
            var = bn.running_var.astype(np.float64)
        std = np.sqrt(var + bn.eps)
        gamma = bn.gamma.data.astype(np.float64)
        beta = bn.beta.data.astype(np.float64)
        alpha = gamma / std
        S = w2.sum(axis=1).astype(np.float64)
        shift = (beta - alpha * mean)[grp] * S
        u = y * alpha[grp].astype(x.dtype)[None, :, None] + shift.astype(x.dtype)[None, :, None]
        self._cache = (xp, vf, wf, y, grp, n, m, R, w1, mean, var, std, alpha, S, training)
        return u.reshape(out_shape)

    def backward(self, dy, need_dx=True):
        xp, vf, wf, y, grp, n, m, R, w1, mean, var, std, alpha, S, training = self._cache
        du = dy[:, :, 0, :]
        F, K = w1.shape
        Tp = xp.shape[-1]
        bn = self.norm
        g = du.sum(axis=(0, 2), dtype=np.float64)  # O
        duy = np.einsum("bot,bot->o", du, y, dtype=np.float64)
        gS = g * S
        dbeta = np.bincount(grp, gS, minlength=F)
        dalpha = np.bincount(grp, duy - mean[grp] * gS, minlength=F)
        bn.beta.grad += dbeta.astype(bn.beta.grad.dtype)
        bn.gamma.grad += (dalpha / std).astype(bn.gamma.grad.dtype)
        dS = (bn.beta.data.astype(np.float64) - alpha * mean)[grp] * g  # O
        dyc = du * alpha[grp].astype(du.dtype)[None, :, None]
        dyf = sfft.rfft(dyc, n=n, axis=-1)  # B, O, nf
        cross = np.einsum("bof,bof->of", np.conj(dyf), vf)
        dw1_o = sfft.irfft(cross, n=n, axis=-1)[:, :K]  # O, K
        dw1 = np.zeros((F, K))
        np.add.at(dw1, grp, dw1_o)
        dmean = dvar = None
        if training:
            dmean = -alpha * np.bincount(grp, gS, minlength=F)
            dvar = dalpha * bn.gamma.data.astype(np.float64) * -0.5 / std ** 3
            w64 = w1.astype(np.float64)
            dw1 += dmean[:, None] * m[None] + dvar[:, None] * 2.0 * (w64 @ R - mean[:, None] * m[None])
        self.temporal.weight.grad[:, 0, 0, :] += dw1.astype(w1.dtype)
        dv = sfft.irfft(dyf * wf[None], n=n, axis=-1)[..., :Tp]  # B, O, Tp
        dw2 = np.einsum("bot,bht->oh", dv, xp) + dS[:, None]
        self.spatial.weight.grad[:, 0, :, 0] += dw2.astype(self.spatial.weight.grad.dtype)
        if not need_dx:
            return None
        dxp = np.matmul(self.spatial.weight.data[:, 0, :, 0].T[None], dv)  # B, H, Tp
        if training:
            dxp = dxp + self._stat_input_grad(xp, w1, n, dmean - 2.0 * mean * dvar, dvar,
                                              y.shape[-1])
        l = self.pad.pad[0]
        T = dy.shape[-1] + w1.shape[1] - 1 - sum(self.pad.pad[:2])
        return dxp[:, None, :, l:l + T].astype(dy.dtype)

    @staticmethod
    def _stat_input_grad(xp, w1, n, dmean, dsecond, Tout):
        """Input gradient through the batch mean and second moment of the temporal-conv output."""
        B, H, Tp = xp.shape
        count = B * H * Tout
        w64 = w1.astype(np.float64)
        wf = sfft.rfft(w64, n=n, axis=-1)  # F, nf
        # d mean_f / d xp[s] = sum_k w_f[k] [0 <= s - k < Tout] / count
        box = sfft.irfft(sfft.rfft(np.ones(Tout), n=n) * wf, n=n, axis=-1)[:, :Tp]
        out = np.broadcast_to((dmean @ box / count)[None, None], xp.shape).copy()
        # d E[z_f^2] / d xp = 2 / count * (z_f convolved with w_f)
        z = sfft.irfft(sfft.rfft(xp.astype(np.float64), n=n, axis=-1)[:, None] * np.conj(wf)[None, :, None],
                       n=n, axis=-1)[..., :Tout]  # B, F, H, Tout
        back = sfft.irfft(sfft.rfft(z, n=n, axis=-1) * (wf * (2.0 * dsecond / count)[:, None])[None, :, None],
                          n=n, axis=-1)[..., :Tp]
        return out + back.sum(axis=1)

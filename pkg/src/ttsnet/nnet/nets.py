"""The temporal decoder CNN, the fully connected head and their fused graph."""

from __future__ import annotations

import numpy as np

from .fused import FusedFront
from .layers import (AvgPool2d, BatchNorm2d, Conv2d, Dropout, ELU, Flatten, Linear,
                     ReLU, Sequential, ShapeError, ZeroPad2d)

DROPOUT = 0.25
# (7, 8) padding keeps T // 4 samples only with a 16-tap kernel.
SEPARABLE_KERNEL = 16


class TemporalDecoder(Sequential):
    """Sequential layer list whose first four layers run fused when ``fused`` is set.

    The fused front end (see :mod:`.fused`) computes the same function and
    gradients as the individual layers; ``fused = False`` runs the reference
    layer-by-layer path.
    """

    def __init__(self, layers, fused: bool = True):
        super().__init__(layers, name="TemporalDecoder")
        self.front = FusedFront(*self.layers[:4])
        self.fused = fused

    def stages(self):
        stages = super().stages()
        if not self.fused:
            return stages
        return [("0-3", self.front)] + stages[4:]


def temporal_decoder(n_channels: int, n_samples: int, n_classes: int,
                     rng: np.random.Generator, dtype=np.float32) -> Sequential:
    """EEGNet-style decoder mapping (B, 1, C, T) to (B, K) logits.

    Temporal conv (8 x (1, 64)) then a grouped spatial conv (16 x (C, 1)),
    pooling by 4, a depthwise-separable conv pair, pooling by 8 and a
    bias-free linear read-out of width ``16 * (T // 32)``.
    """
    if n_samples < 32:
        raise ShapeError(f"decoder needs T >= 32, got {n_samples}")
    width = 16 * (n_samples // 32)
    layers = [
        ZeroPad2d(31, 32, 0, 0),
        Conv2d(1, 8, (1, 64), rng=rng),
        BatchNorm2d(8),
        Conv2d(8, 16, (n_channels, 1), groups=8, rng=rng),
        BatchNorm2d(16),
        ELU(),
        AvgPool2d(4),
        Dropout(DROPOUT, rng),
        ZeroPad2d(7, 8, 0, 0),
        Conv2d(16, 16, (1, SEPARABLE_KERNEL), groups=16, rng=rng),
        Conv2d(16, 16, (1, 1), rng=rng),
        BatchNorm2d(16),
        ELU(),
        AvgPool2d(8),
        Dropout(DROPOUT, rng),
        Flatten(),
        Linear(width, n_classes, rng=rng),
    ]
    return TemporalDecoder(layers).astype(dtype)


def classifier_head(n_classes: int, n_banks: int, rng: np.random.Generator,
                    dtype=np.float32) -> Sequential:
    """Bias-free MLP mapping (B, K, F) decoder outputs to (B, K) logits."""
    kf = n_classes * n_banks
    layers = [
        Flatten(),
        Linear(kf, 2 * kf, rng=rng),
        ReLU(),
        Linear(2 * kf, kf // 2, rng=rng),
        ReLU(),
        Linear(kf // 2, n_classes, rng=rng),
    ]
    return Sequential(layers, name="ClassifierHead").astype(dtype)


class FusedNet:
    """Per-bank decoders whose logits are stacked to (B, K, F) and fed to a head."""

    def __init__(self, decoders, head):
        self.decoders = list(decoders)
        self.head = head

    @classmethod
    def build(cls, n_channels, n_samples, n_classes, n_banks, rng, dtype=np.float32):
        decoders = [temporal_decoder(n_channels, n_samples, n_classes, rng, dtype)
                    for _ in range(n_banks)]
        return cls(decoders, classifier_head(n_classes, n_banks, rng, dtype))

    @property
    def params(self):
        return tuple(p for d in self.decoders for p in d.params) + self.head.params

    def named_params(self):
        for f, d in enumerate(self.decoders):
            for name, p in d.named_params():
                yield f"decoder{f}.{name}", p
        for name, p in self.head.named_params():
            yield f"head.{name}", p

    def decoder_features(self, xs, training=False):
        """Stack per-bank decoder logits into a (B, K, F) array."""
        if len(xs) != len(self.decoders):
            raise ShapeError(f"{len(xs)} bank inputs for {len(self.decoders)} decoders")
        return np.stack([d.forward(x, training) for d, x in zip(self.decoders, xs)], axis=-1)

    def forward(self, xs, training=False):
        return self.head.forward(self.decoder_features(xs, training), training)

    def backward(self, dy, need_dx=False):
        dfeat = self.head.backward(dy, need_dx=True)
        dxs = [d.backward(np.ascontiguousarray(dfeat[..., f]), need_dx=need_dx)
               for f, d in enumerate(self.decoders)]
        return dxs if need_dx else None

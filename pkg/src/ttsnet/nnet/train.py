"""Mini-batch training and batched inference."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import make_rng
from .optim import Adam, cross_entropy


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    batch_size: int = 50
    weight_decay: float = 0.0
    seed: int = 0


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def rows(self):
        return [(i + 1, l, a) for i, (l, a) in enumerate(zip(self.loss, self.accuracy))]


def _take(inputs, idx):
    if isinstance(inputs, (list, tuple)):
        return [x[idx] for x in inputs]
    return inputs[idx]


def _count(inputs):
    return len(inputs[0]) if isinstance(inputs, (list, tuple)) else len(inputs)


def train_network(net, inputs, labels, cfg: TrainConfig, params=None) -> TrainHistory:
    """Train ``net`` with Adam on softmax cross-entropy.

    ``inputs`` is an array (or, for a fused net, a list of per-bank arrays)
    with trials on the first axis. Each epoch visits the trials in a fresh
    seeded permutation; the last batch of an epoch may be short. Only
    ``params`` (default: all of the net's parameters) are updated.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = _count(inputs)
    if n != len(labels):
        raise ValueError(f"{n} inputs for {len(labels)} labels")
    params = list(net.params if params is None else params)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = make_rng(cfg.seed)
    history = TrainHistory()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = net.forward(_take(inputs, idx), training=True)
            loss, grad = cross_entropy(logits, labels[idx])
            opt.zero_grad()
            net.backward(grad.astype(logits.dtype), need_dx=False)
            if cfg.lr:
                opt.step()
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / n)
    return history


def predict_logits(net, inputs, batch_size=256) -> np.ndarray:
    """Inference-mode logits (dropout off, batch norm on running statistics)."""
    n = _count(inputs)
    out = [net.forward(_take(inputs, slice(s, s + batch_size)), training=False)
           for s in range(0, n, batch_size)]
    return np.concatenate(out, axis=0)

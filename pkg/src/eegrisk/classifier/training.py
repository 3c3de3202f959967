"""Mini-batch SGD with momentum."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .network import Network, backward, forward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 0.001
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError(f"learning rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


def sgd_momentum_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
                      learning_rate: float, momentum: float) -> None:
    """In place: ``v <- m*v - lr*g``; ``w <- w + v``."""
    for name, g in grads.items():
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(params[name])
        v *= momentum
        v -= learning_rate * g.astype(v.dtype, copy=False)
        params[name] += v


def train(net: Network, dataset, cfg: TrainConfig = TrainConfig(), labels=None, callback=None):
    """Train ``net`` in place.

    ``dataset`` is an :class:`~eegrisk.imaging.Dataset` (pixels are
    materialized batch by batch) or an ``(n, h, w)`` array, in which case
    ``labels`` must hold the matching 0/1 classes.  Samples are reshuffled
    every epoch from a generator seeded by ``cfg.seed``; dropout draws from
    the same generator, so a run is fully determined by the seed.  The final
    partial batch of an epoch is kept.  Returns ``(net, history)`` with
    per-epoch mean loss and training accuracy (from the train-mode outputs
    seen during the epoch).
    """
    if labels is None:
        labels = dataset.labels
        fetch = dataset.pixels
    else:
        fetch = dataset.__getitem__
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(dataset) != n:
        raise ValueError(f"{len(dataset)} images for {n} labels")
    rng = np.random.default_rng(cfg.seed)
    params = {name: arr for name, arr in net.named_params()}
    velocity: dict[str, np.ndarray] = {}
    history = History()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            y = labels[idx]
            loss, grads = backward(net, fetch(idx), y, rng=rng)
            correct += int((net.last_probs.argmax(axis=1) == y).sum())
            sgd_momentum_step(params, grads, velocity, cfg.learning_rate, cfg.momentum)
            total_loss += loss * len(idx)
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / n)
        log.info("epoch %d/%d loss %.4f acc %.3f", epoch + 1, cfg.epochs, history.loss[-1], history.accuracy[-1])
        if callback is not None:
            callback(epoch, history)
    return net, history


def accuracy(net: Network, images, labels) -> float:
    probs = forward(net, images)
    return float((probs.argmax(axis=1) == np.asarray(labels)).mean())

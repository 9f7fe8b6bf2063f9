"""Seeded mini-batch gradient descent shared by the three trainable models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DivergenceError


@dataclass
class TrainingRun:
    params: object
    losses: list = field(default_factory=list)  # full-data loss after each epoch
    val_accuracy: float | None = None
    skipped: int = 0  # training items dropped for lack of a usable label


def minibatch_gd(
    weights: dict,
    loss_and_grads: Callable,
    n_examples: int,
    *,
    lr: float,
    epochs: int,
    batch: int,
    rng: np.random.Generator,
) -> list:
    """Update ``weights`` in place; return the per-epoch full-data loss.

    ``loss_and_grads(weights, idx)`` returns ``(loss, grads)`` for the examples
    in ``idx``; passing ``idx=None`` means the whole dataset.
    """
    if n_examples < 1:
        raise ValueError("need at least one training example")
    losses = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n_examples)
        for start in range(0, n_examples, batch):
            idx = order[start : start + batch]
            _, grads = loss_and_grads(weights, idx)
            for name, g in grads.items():
                weights[name] -= lr * g
        loss, _ = loss_and_grads(weights, None)
        # a bounded loss can stay finite while the weights overflow
        if not math.isfinite(loss) or not all(np.isfinite(w).all() for w in weights.values()):
            raise DivergenceError(epoch, loss)
        losses.append(float(loss))
    return losses

"""Training objectives.

A criterion is called as ``criterion(model, batch, rng)`` and returns a
scalar :class:`~pgen.tensor.Tensor`. Criteria that depend on a scheduled
hyper-parameter read it in :meth:`Criterion.set_step`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import EmptyList, LengthMismatch
from .model import nat_targets, placeholders
from .pipeline import PAD
from .registry import REGISTRY, register
from .schedule import build_scheduler
from .tensor import Tensor


def glance_count(first_pass: Sequence[int], target: Sequence[int], ratio: float, pad_id: int = PAD) -> int:
    """``floor(ratio * hamming)`` where the distance counts non-pad target positions only."""
    first_pass = np.asarray(first_pass)
    target = np.asarray(target)
    if first_pass.shape != target.shape:
        raise LengthMismatch(f"lengths differ: {first_pass.shape} vs {target.shape}")
    dist = int(((first_pass != target) & (target != pad_id)).sum())
    return int(np.floor(ratio * dist))


@dataclass
class GlanceOutcome:
    reveal_mask: np.ndarray  # [B, L] bool
    revealed_count: np.ndarray  # [B]
    first_pass_prediction: np.ndarray  # [B, L]


def _flat_ce(logits: Tensor, labels: np.ndarray, epsilon: float) -> Tensor:
    B, L, V = logits.shape
    return T.cross_entropy_smoothed(T.reshape(logits, (B * L, V)), labels.reshape(-1), epsilon, PAD)


def _length_loss(model, memory, batch, tgt_lengths) -> Tensor:
    logits = model.length_logits(memory, batch.src_mask)
    return T.cross_entropy_smoothed(logits, model.length_target(batch.src_lengths, tgt_lengths), 0.0, None)


class Criterion:
    def set_step(self, step: int) -> None:
        pass

    def __call__(self, model, batch, rng=None, training: bool = True) -> Tensor:
        raise NotImplementedError


@register("criterion", "cross_entropy")
class CrossEntropy(Criterion):
    """Label-smoothed token cross entropy (teacher forcing for AR models,
    all-placeholder input for NAT models)."""

    def __init__(self, epsilon: float = 0.1, length_weight: float = 0.0):
        self.epsilon = epsilon
        self.length_weight = length_weight

    def __call__(self, model, batch, rng=None, training=True):
        if model.autoregressive:
            tgt, mask = batch.tgt_tokens, batch.tgt_mask
            logits = model.forward(batch.src_tokens, batch.src_mask, tgt[:, :-1], mask[:, :-1], training, rng)
            return _flat_ce(logits, tgt[:, 1:], self.epsilon)
        targets, lengths = nat_targets(batch)
        dec, dmask = placeholders(lengths, targets.shape[1])
        memory = model.encode(batch.src_tokens, batch.src_mask, training, rng)
        loss = _flat_ce(model.forward(None, batch.src_mask, dec, dmask, training, rng, memory=memory),
                        targets, self.epsilon)
        if self.length_weight:
            loss = T.weighted_sum([loss, _length_loss(model, memory, batch, lengths)], [1.0, self.length_weight])
        return loss


def glance(model, memory, batch, targets, lengths, ratio: float, rng: np.random.Generator) -> GlanceOutcome:
    """First parallel pass without gradient, then pick positions to reveal."""
    dec, dmask = placeholders(lengths, targets.shape[1])
    with T.no_grad():
        logits = model.forward(None, batch.src_mask, dec, dmask, False, None, memory=memory)
    pred = np.where(dmask, logits.data.argmax(axis=-1), PAD)
    reveal = np.zeros(targets.shape, dtype=bool)
    counts = np.zeros(targets.shape[0], dtype=np.int64)
    for b in range(targets.shape[0]):
        n = glance_count(pred[b], targets[b], ratio)
        if n:
            pos = rng.choice(int(lengths[b]), size=n, replace=False)
            reveal[b, pos] = True
        counts[b] = n
    return GlanceOutcome(reveal, counts, pred)


def glancing_loss(model, batch, ratio: float, rng: np.random.Generator, epsilon: float = 0.0,
                  training: bool = True, length_weight: float = 0.0, return_outcome: bool = False):
    """Glancing objective for a parallel model.

    1. predict every position from placeholders (no gradient);
    2. reveal ``glance_count`` gold tokens at uniformly chosen non-pad positions;
    3. predict again from the partly revealed input and score only the
       positions that stayed hidden. With nothing left to score the loss is 0.
    """
    targets, lengths = nat_targets(batch)
    memory = model.encode(batch.src_tokens, batch.src_mask, training, rng)
    outcome = glance(model, memory, batch, targets, lengths, ratio, rng)
    dec, dmask = placeholders(lengths, targets.shape[1])
    dec = np.where(outcome.reveal_mask, targets, dec)
    logits = model.forward(None, batch.src_mask, dec, dmask, training, rng, memory=memory)
    loss = _flat_ce(logits, np.where(outcome.reveal_mask, PAD, targets), epsilon)
    if length_weight:
        loss = T.weighted_sum([loss, _length_loss(model, memory, batch, lengths)], [1.0, length_weight])
    return (loss, outcome) if return_outcome else loss


@register("criterion", "glancing")
class Glancing(Criterion):
    def __init__(self, epsilon: float = 0.1, glancing_ratio=None, length_weight: float = 0.0):
        self.epsilon = epsilon
        self.length_weight = length_weight
        if glancing_ratio is None:
            glancing_ratio = {"start": 0.5, "end": 0.3}
        if isinstance(glancing_ratio, dict) and "class" not in glancing_ratio:
            # shorthand {start, end[, total]} means a linear decay
            glancing_ratio = {"class": "linear", "total": 10000, **glancing_ratio}
        self.schedule = build_scheduler(glancing_ratio)
        self.ratio = self.schedule(1)

    def set_step(self, step):
        self.ratio = self.schedule(step)

    def __call__(self, model, batch, rng=None, training=True):
        if rng is None:
            rng = np.random.default_rng(0)
        return glancing_loss(model, batch, self.ratio, rng, self.epsilon, training, self.length_weight)


def multi_task_combine(losses: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    if not losses:
        raise EmptyList("need at least one loss")
    if len(losses) != len(weights):
        raise LengthMismatch(f"{len(losses)} losses but {len(weights)} weights")
    return T.weighted_sum(list(losses), list(weights))


@register("criterion", "multi_task")
class MultiTask(Criterion):
    """Weighted sum of several criteria evaluated on the same batch."""

    def __init__(self, tasks: Sequence, weights: Sequence[float] | None = None):
        self.tasks = [t if isinstance(t, Criterion) else REGISTRY.create("criterion", t) for t in tasks]
        self.weights = list(weights) if weights is not None else [1.0] * len(self.tasks)
        if not self.tasks:
            raise EmptyList("multi_task needs at least one task")
        if len(self.weights) != len(self.tasks):
            raise LengthMismatch(f"{len(self.tasks)} tasks but {len(self.weights)} weights")

    def set_step(self, step):
        for t in self.tasks:
            t.set_step(step)

    def __call__(self, model, batch, rng=None, training=True):
        return multi_task_combine([t(model, batch, rng, training) for t in self.tasks], self.weights)


@register("criterion", "length")
class LengthLoss(Criterion):
    """Cross entropy of the parallel model's target-length classifier."""

    def __call__(self, model, batch, rng=None, training=True):
        _, lengths = nat_targets(batch)
        memory = model.encode(batch.src_tokens, batch.src_mask, training, rng)
        return _length_loss(model, memory, batch, lengths)


@dataclass
class ArrayBatch:
    x: np.ndarray
    y: np.ndarray

    @property
    def size(self) -> int:
        return self.x.shape[0]


@register("criterion", "mse")
class MeanSquaredError(Criterion):
    def __call__(self, model, batch, rng=None, training=True):
        diff = T.add_const(model.forward(batch.x), -np.asarray(batch.y, dtype=model.params["linear.0.weight"].dtype))
        return T.mean(T.mul(diff, diff))

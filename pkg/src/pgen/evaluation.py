"""Metrics, the dataset x metric evaluator, and checkpoint selection."""
from __future__ import annotations

import collections
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import Checkpoint
from .errors import Empty, FormatError, LengthMismatch
from .registry import REGISTRY, register


def _ngrams(tokens: Sequence[str], n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU in [0, 1] over whitespace tokens, without smoothing."""
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise Empty("BLEU needs at least one sentence")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = hyp.split(), ref.split()
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0 or min(matches) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return bp * math.exp(log_p)


def accuracy(pred: Sequence, gold: Sequence) -> float:
    if len(pred) != len(gold):
        raise LengthMismatch(f"{len(pred)} predictions but {len(gold)} labels")
    if not pred:
        raise Empty("accuracy needs at least one item")
    return sum(p == g for p, g in zip(pred, gold)) / len(pred)


def f1(pred: Sequence, gold: Sequence) -> float:
    """Multiset-overlap F1 between two token bags."""
    if not pred and not gold:
        return 1.0
    if not pred or not gold:
        return 0.0
    overlap = sum((collections.Counter(pred) & collections.Counter(gold)).values())
    if overlap == 0:
        return 0.0
    p, r = overlap / len(pred), overlap / len(gold)
    return 2 * p * r / (p + r)


class Metric:
    higher_is_better = True

    def __call__(self, hypotheses: Sequence[str], references: Sequence[str]) -> float:
        raise NotImplementedError


@register("metric", "bleu")
class Bleu(Metric):
    def __init__(self, max_n: int = 4):
        self.max_n = max_n

    def __call__(self, hypotheses, references):
        return bleu(hypotheses, references, self.max_n)


@register("metric", "accuracy")
class Accuracy(Metric):
    def __call__(self, hypotheses, references):
        return accuracy([h.strip() for h in hypotheses], [r.strip() for r in references])


@register("metric", "f1")
class F1(Metric):
    """Mean per-sentence token F1."""

    def __call__(self, hypotheses, references):
        if len(hypotheses) != len(references):
            raise LengthMismatch(f"{len(hypotheses)} hypotheses but {len(references)} references")
        if not hypotheses:
            raise Empty("f1 needs at least one sentence")
        return float(np.mean([f1(h.split(), r.split()) for h, r in zip(hypotheses, references)]))


@register("metric", "token_accuracy")
class TokenAccuracy(Metric):
    """Position-wise token matches over the longer of each pair."""

    def __call__(self, hypotheses, references):
        hit = total = 0
        for h, r in zip(hypotheses, references, strict=True):
            hs, rs = h.split(), r.split()
            hit += sum(a == b for a, b in zip(hs, rs))
            total += max(len(hs), len(rs))
        return hit / total if total else 1.0


POLARITY = {"bleu": True, "accuracy": True, "f1": True, "token_accuracy": True, "loss": False}


def higher_is_better(metric_name: str) -> bool:
    return POLARITY.get(metric_name, True)


@dataclass
class ScoreBoard:
    scores: dict[tuple[str, str], float] = field(default_factory=dict)

    @property
    def overall(self) -> float:
        return float(np.mean(list(self.scores.values()))) if self.scores else float("nan")

    def __getitem__(self, key: tuple[str, str]) -> float:
        return self.scores[key]

    def to_json(self) -> str:
        flat = {f"{d}.{m}": v for (d, m), v in self.scores.items()}
        return json.dumps({"scores": flat, "overall": self.overall}, sort_keys=True)


@dataclass
class EvalSet:
    """Batches to decode plus one reference string per sample, in order."""

    batches: list
    references: list[str]


def evaluate(generator: Callable, datasets: Mapping[str, EvalSet], metrics: Mapping[str, Callable]) -> ScoreBoard:
    """Decode every dataset once and score it with every metric."""
    if not datasets or not metrics:
        raise Empty("evaluate needs at least one dataset and one metric")
    board = ScoreBoard()
    for dname, ds in datasets.items():
        hyps: list[str] = []
        for b in ds.batches:
            hyps.extend(generator(b))
        for mname, metric in metrics.items():
            board.scores[dname, mname] = float(metric(hyps, ds.references))
    return board


@register("evaluator", "default")
class Evaluator:
    def __init__(self, datasets: Mapping[str, EvalSet], metrics: Sequence[str] = ("bleu",)):
        self.datasets = dict(datasets)
        self.metrics = {m: REGISTRY.create("metric", {"class": m}) for m in metrics}

    def __call__(self, generator) -> ScoreBoard:
        return evaluate(generator, self.datasets, self.metrics)


def parse_assess_by(s: str) -> tuple[str, str]:
    """``"{DATA_NAME}.{METRIC_NAME}"`` -> (data, metric)."""
    if s.count(".") != 1:
        raise FormatError(f"assess_by must look like '<dataset>.<metric>', got {s!r}")
    data, metric = s.split(".")
    if not data or not metric:
        raise FormatError(f"assess_by must look like '<dataset>.<metric>', got {s!r}")
    return data, metric


def average_params(ckpts: Sequence[Checkpoint]) -> dict[str, np.ndarray]:
    """Element-wise mean, accumulated in float64."""
    names = ckpts[0].params.keys()
    return {n: np.mean([np.asarray(c.params[n], dtype=np.float64) for c in ckpts], axis=0) for n in names}


def select_and_average(history: Sequence[tuple[Checkpoint, float]], k: int,
                       higher_better: bool = True) -> tuple[Checkpoint, Checkpoint]:
    """Best checkpoint (latest on ties) and the mean of the ``k`` checkpoints
    ending at it, or of all earlier ones when fewer than ``k`` exist."""
    if not history:
        raise Empty("no checkpoints to select from")
    sign = 1.0 if higher_better else -1.0
    best_i = max(range(len(history)), key=lambda i: (sign * history[i][1], i))
    best = history[best_i][0]
    window = [c for c, _ in history[max(0, best_i - k + 1) : best_i + 1]]
    avg = Checkpoint(average_params(window), dict(best.train_state), dict(best.scores))
    return best, avg

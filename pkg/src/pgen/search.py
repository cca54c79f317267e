"""Decoding algorithms.

Autoregressive searches drive any object with the incremental interface

    state = model.begin(src_tokens[None])      # batch of one source
    logits, state = model.step(state, tokens)  # tokens: one id per live row
    state = state.select(rows)                 # reorder / repeat rows

which :class:`~pgen.model.Transformer` implements. Parallel searches need a
:class:`~pgen.model.NATransformer`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import BadIteration
from .pipeline import BOS, EOS, MASK, PAD
from .registry import register

# ids a parallel decoder may never emit
_BLOCKED = (PAD, BOS, EOS, MASK)


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    finished: bool

    @property
    def length(self) -> int:
        """Decoding steps consumed, counting the eos step when finished."""
        return len(self.tokens) + int(self.finished)

    def normalized(self, alpha: float) -> float:
        return self.score / max(self.length, 1) ** alpha if alpha else self.score


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_decode(model, src, max_len: int) -> Hypothesis:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    state = model.begin(np.asarray(src, dtype=np.int64)[None])
    tok, tokens, score = BOS, [], 0.0
    for _ in range(max_len):
        logits, state = model.step(state, [tok])
        logp = _log_softmax(logits)[0]
        tok = int(np.argmax(logp))  # first maximum, i.e. lowest id on ties
        score += float(logp[tok])
        if tok == EOS:
            return Hypothesis(tokens, score, True)
        tokens.append(tok)
    return Hypothesis(tokens, score, False)


def beam_decode(model, src, beam_size: int, max_len: int, length_penalty: float = 0.0) -> Hypothesis:
    """Beam search ranked at the end by ``score / length ** length_penalty``.

    Each step expands every live hypothesis by the full vocabulary and keeps
    the best ``beam_size`` candidates; those ending in eos move to the
    finished pool. Hypotheses still live after ``max_len`` steps compete
    unfinished. All ties resolve to the lexicographically smaller sequence.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    state = model.begin(np.asarray(src, dtype=np.int64)[None])
    live = [Hypothesis([], 0.0, False)]
    last = [BOS]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        logits, state = model.step(state, last)
        logp = _log_softmax(logits)
        V = logp.shape[1]
        cands = sorted(
            ((live[i].score + float(logp[i, v]), live[i].tokens + [v], i) for i in range(len(live)) for v in range(V)),
            key=lambda c: (-c[0], c[1]),
        )[:beam_size]
        live, rows, last = [], [], []
        for score, toks, i in cands:
            if toks[-1] == EOS:
                finished.append(Hypothesis(toks[:-1], score, True))
            else:
                live.append(Hypothesis(toks, score, False))
                rows.append(i)
                last.append(toks[-1])
        if not live:
            break
        state = state.select(rows)
    pool = finished + live
    return min(pool, key=lambda h: (-h.normalized(length_penalty), h.tokens))


def remask_count(length: int, t: int, total: int) -> int:
    if not 1 <= t <= total:
        raise BadIteration(f"iteration {t} outside 1..{total}")
    return (length * (total - t)) // total


@dataclass
class MaskPredictResult:
    tokens: np.ndarray
    probs: np.ndarray
    masked_per_iteration: list[int] = field(default_factory=list)

    @property
    def mean_log_prob(self) -> float:
        return float(np.mean(np.log(np.maximum(self.probs, 1e-300))))


def _position_probs(model, memory, src_mask, dec) -> np.ndarray:
    logits = model.forward(None, src_mask, dec[None], None, memory=memory).data[0].astype(np.float64)
    logits[:, list(_BLOCKED)] = -np.inf
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _encode_one(model, src):
    src = np.asarray(src, dtype=np.int64)[None]
    mask = src != PAD
    return model.encode(src, mask), mask


def mask_predict(model, src, length: int, iterations: int, _memory=None) -> MaskPredictResult:
    """Iterative parallel refinement.

    Iteration 1 predicts every position. Iteration t >= 2 re-masks the
    ``remask_count(length, t - 1, iterations)`` least confident positions
    (leftmost first on ties) and re-predicts only those.
    """
    if iterations < 1:
        raise BadIteration("iterations must be >= 1")
    with T.no_grad():
        memory, src_mask = _memory if _memory is not None else _encode_one(model, src)
        dec = np.full(length, MASK, dtype=np.int64)
        probs = _position_probs(model, memory, src_mask, dec)
        tokens = probs.argmax(axis=-1)
        conf = probs[np.arange(length), tokens]
        trace = []
        for t in range(2, iterations + 1):
            n = remask_count(length, t - 1, iterations)
            trace.append(n)
            if n == 0:
                continue
            pos = np.lexsort((np.arange(length), conf))[:n]
            dec = tokens.copy()
            dec[pos] = MASK
            probs = _position_probs(model, memory, src_mask, dec)
            tokens[pos] = probs[pos].argmax(axis=-1)
            conf[pos] = probs[pos, tokens[pos]]
    return MaskPredictResult(tokens, conf, trace)


def npd_decode(model, src, length_beam: int, iterations: int) -> np.ndarray:
    """Decode several candidate lengths and keep the best-scoring output.

    Candidates are the ``length_beam`` most probable lengths; each is refined
    with :func:`mask_predict` and scored by its mean per-token log-probability.
    Ties go to the shorter candidate.
    """
    return npd_candidates(model, src, length_beam, iterations)[0].tokens


def npd_candidates(model, src, length_beam: int, iterations: int) -> list[MaskPredictResult]:
    """All :func:`npd_decode` candidates, best first."""
    if length_beam < 1:
        raise ValueError("length_beam must be >= 1")
    with T.no_grad():
        memory, src_mask = _encode_one(model, src)
        probs = model.predict_length(memory, src_mask)[0]
    lengths = model.length_candidates(probs, int(src_mask.sum()), length_beam)
    results = [mask_predict(model, src, L, iterations, _memory=(memory, src_mask)) for L in lengths]
    return sorted(results, key=lambda r: (-r.mean_log_prob, len(r.tokens)))


class Search:
    """Maps one source id sequence to output ids (no bos/eos)."""

    def __call__(self, model, src) -> list[int]:
        raise NotImplementedError


def _cap(model, max_len: int) -> int:
    return min(max_len, model.cfg.max_positions) if hasattr(model, "cfg") else max_len


@register("search", "greedy")
class GreedySearch(Search):
    def __init__(self, max_len: int = 200):
        self.max_len = max_len

    def __call__(self, model, src):
        return greedy_decode(model, src, _cap(model, self.max_len)).tokens


@register("search", "beam")
class BeamSearch(Search):
    def __init__(self, beam: int = 4, max_len: int = 200, lenpen: float = 0.6):
        self.beam = beam
        self.max_len = max_len
        self.lenpen = lenpen

    def __call__(self, model, src):
        return beam_decode(model, src, self.beam, _cap(model, self.max_len), self.lenpen).tokens


@register("search", "mask_predict")
class MaskPredictSearch(Search):
    """Mask-predict at the most probable predicted length."""

    def __init__(self, iterations: int = 4):
        self.iterations = iterations

    def __call__(self, model, src):
        return npd_decode(model, src, 1, self.iterations).tolist()


@register("search", "npd")
class NoisyParallelSearch(Search):
    def __init__(self, length_beam: int = 3, iterations: int = 4):
        self.length_beam = length_beam
        self.iterations = iterations

    def __call__(self, model, src):
        return npd_decode(model, src, self.length_beam, self.iterations).tolist()

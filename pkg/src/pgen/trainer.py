"""Optimization: Adam, the training loop, early stopping, and resuming.

The learning rate is owned by the optimizer: every update asks the rate
scheduler for ``rate(step)`` itself instead of being driven from outside.
"""
from __future__ import annotations

import base64
import collections
import copy
import logging
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as T
from .checkpoint import Checkpoint
from .data import End
from .errors import ConfigError, ShapeMismatch
from .evaluation import higher_is_better, parse_assess_by, select_and_average
from .registry import register
from .schedule import build_scheduler, rate  # noqa: F401  (rate re-exported)

log = logging.getLogger(__name__)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
    """One bias-corrected Adam update.

    ``state`` holds ``step`` and per-parameter moments ``m``/``v``; new
    dicts are returned and the inputs are left untouched.
    """
    t = state.get("step", 0) + 1
    m_old, v_old = state.get("m", {}), state.get("v", {})
    new_p, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = beta1 * m_old.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * v_old.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_p, {"step": t, "m": m_new, "v": v_new}


@register("optimizer", "adam")
class Adam:
    def __init__(self, lr=1e-3, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9,
                 clip_norm: float | None = 1.0):
        self.schedule = build_scheduler(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.state: dict = {"step": 0, "m": {}, "v": {}}
        self.last_lr: float | None = None

    @property
    def step_count(self) -> int:
        return self.state["step"]

    def update(self, params: dict[str, T.Tensor]) -> float:
        """Apply one update from the gradients on ``params``; returns the lr used."""
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
        if self.clip_norm:
            norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
            if norm > self.clip_norm:
                factor = self.clip_norm / norm
                grads = {k: g * np.asarray(factor, dtype=g.dtype) for k, g in grads.items()}
        lr = self.schedule(self.state["step"] + 1)
        self.last_lr = lr
        arrays = {k: p.data for k, p in params.items()}
        new, self.state = adam_step(arrays, grads, self.state, lr, self.beta1, self.beta2, self.eps)
        for k, p in params.items():
            p.data = new[k].astype(p.dtype, copy=False)
        return lr

    def state_dict(self) -> dict:
        return {"step": self.state["step"],
                "m": {k: _encode_array(a) for k, a in self.state["m"].items()},
                "v": {k: _encode_array(a) for k, a in self.state["v"].items()}}

    def load_state_dict(self, d: dict) -> None:
        self.state = {"step": d["step"],
                      "m": {k: _decode_array(a) for k, a in d["m"].items()},
                      "v": {k: _decode_array(a) for k, a in d["v"].items()}}


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    loader: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    best_score: float | None = None
    bad_evals: int = 0
    history: list = field(default_factory=list)  # [[step, score, path], ...]

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        return cls(**d)


def forward_loss(criterion, model, batch, rng=None, training: bool = True) -> T.Tensor:
    return criterion(model, batch, rng, training)


@dataclass
class TrainResult:
    checkpoints: dict[str, Checkpoint]
    stop_reason: str
    state: TrainState


@register("trainer", "default")
class Trainer:
    """Runs updates until ``max_steps`` or until early stopping triggers.

    Each update accumulates gradients over ``accumulate`` micro-batches
    (every micro-batch loss is scaled by ``1/accumulate``). Every
    ``eval_interval`` updates a checkpoint is written; when an evaluator is
    attached its ``assess_by`` score drives early stopping and best /
    best_avg selection.
    """

    def __init__(self, model, criterion, loader, optimizer: Adam | None = None, max_steps: int = 1000,
                 accumulate: int = 1, eval_interval: int = 0, patience: int = 0, evaluator=None,
                 generator: Callable | None = None, assess_by: str | None = None, avg_k: int = 5,
                 save_dir: str | None = None, seed: int = 0, log_interval: int = 100):
        if accumulate < 1:
            raise ConfigError("accumulate must be >= 1")
        if evaluator is not None and assess_by is None:
            raise ConfigError("an evaluator needs trainer.assess_by")
        self.model = model
        self.criterion = criterion
        self.loader = loader
        self.optimizer = optimizer or Adam()
        self.max_steps = max_steps
        self.accumulate = accumulate
        self.eval_interval = eval_interval
        self.patience = patience
        self.evaluator = evaluator
        self.generator = generator
        self.assess_by = parse_assess_by(assess_by) if assess_by else None
        self.avg_k = avg_k
        self.save_dir = save_dir
        self.log_interval = log_interval
        self.rng = np.random.default_rng(seed)
        self.state = TrainState()
        self._recent: collections.deque = collections.deque(maxlen=max(avg_k, 1))
        self._writers: list = []
        self.last_board = None

    # -- pieces
    def forward_loss(self, batch) -> T.Tensor:
        return forward_loss(self.criterion, self.model, batch, self.rng, True)

    def _next_batch(self):
        b = self.loader.next_batch()
        if b is End:
            self.loader.reset()
            self.state.epoch += 1
            b = self.loader.next_batch()
            if b is End:
                raise ConfigError("training data is empty")
        return b

    def train_step(self) -> float:
        params = self.model.parameters()
        for p in params.values():
            p.grad = None
        self.criterion.set_step(self.state.step + 1)
        total = 0.0
        for _ in range(self.accumulate):
            loss = self.forward_loss(self._next_batch())
            total += loss.item()
            T.backward(T.scale(loss, 1.0 / self.accumulate) if self.accumulate > 1 else loss)
        self.optimizer.update(params)
        self.state.step += 1
        return total / self.accumulate

    # -- checkpoints
    def snapshot(self, scores: dict | None = None) -> Checkpoint:
        s = self.state
        s.optimizer = self.optimizer.state_dict()
        s.rng = self.rng.bit_generator.state
        s.loader = self.loader.state() if hasattr(self.loader, "state") else {}
        return Checkpoint(self.model.state_arrays(), copy.deepcopy(s.to_dict()), dict(scores or {}))

    def _path(self, tag: str) -> str | None:
        return os.path.join(self.save_dir, f"ckpt.{tag}.bin") if self.save_dir else None

    def _save(self, ckpt: Checkpoint, tag: str) -> str | None:
        path = self._path(tag)
        if path:
            os.makedirs(self.save_dir, exist_ok=True)
            self._writers.append(ckpt_io.save(ckpt, path))
        return path

    def flush(self) -> None:
        """Wait for every queued checkpoint write."""
        writers, self._writers = self._writers, []
        for w in writers:
            w.close()

    def resume(self, path: str) -> None:
        self.flush()
        ck = ckpt_io.load(path)
        self.model.load_arrays(ck.params)
        self.state = TrainState.from_dict(ck.train_state)
        self.optimizer.load_state_dict(self.state.optimizer)
        self.rng.bit_generator.state = self.state.rng
        if self.state.loader and hasattr(self.loader, "load_state"):
            self.loader.load_state(self.state.loader)
        self._recent.clear()
        for step, score, p in self.state.history[-self._recent.maxlen:]:
            if p and os.path.exists(p):
                self._recent.append((ckpt_io.load(p), score))

    # -- evaluation / selection
    def _evaluate(self) -> tuple[bool, dict]:
        """Returns (stop_early, scores)."""
        if self.evaluator is None:
            return False, {}
        board = self.evaluator(self.generator)
        self.last_board = board
        scores = {f"{d}.{m}": v for (d, m), v in board.scores.items()}
        scores["overall"] = board.overall
        data, metric = self.assess_by
        if (data, metric) not in board.scores:
            raise ConfigError(f"assess_by {data}.{metric} is not among the evaluated scores")
        score = board.scores[data, metric]
        hib = higher_is_better(metric)
        s = self.state
        improved = s.best_score is None or (score > s.best_score if hib else score < s.best_score)
        if improved:
            s.best_score, s.bad_evals = score, 0
        else:
            s.bad_evals += 1
        log.info("step %d: %s=%.4f (best %.4f)", s.step, ".".join(self.assess_by), score, s.best_score)
        return bool(self.patience and s.bad_evals >= self.patience), scores

    def train(self, resume_from: str | None = None) -> TrainResult:
        if resume_from:
            self.resume(resume_from)
        out: dict[str, Checkpoint] = {}
        reason = "max_steps"
        try:
            while self.state.step < self.max_steps:
                loss = self.train_step()
                if self.log_interval and self.state.step % self.log_interval == 0:
                    log.info("step %d loss %.4f lr %.3g", self.state.step, loss, self.optimizer.last_lr)
                if self.eval_interval and self.state.step % self.eval_interval == 0:
                    stop, scores = self._evaluate()
                    step = self.state.step
                    if self.evaluator is not None:
                        score = scores[".".join(self.assess_by)]
                        self.state.history.append([step, score, self._path(f"step{step}")])
                    ck = self.snapshot(scores)
                    self._save(ck, f"step{step}")
                    out["last"] = ck
                    if self.evaluator is not None:
                        self._recent.append((ck, scores[".".join(self.assess_by)]))
                        if self.state.best_score == scores[".".join(self.assess_by)] and self.state.bad_evals == 0:
                            best, avg = select_and_average(list(self._recent), self.avg_k,
                                                           higher_is_better(self.assess_by[1]))
                            out["best"], out["best_avg"] = best, avg
                            self._save(best, "best")
                            self._save(avg, "best_avg")
                    if stop:  # checked before the max-step condition
                        reason = "early_stop"
                        break
            if "last" not in out or out["last"].step != self.state.step:
                out["last"] = self.snapshot()
            self._save(out["last"], "last")
        finally:
            self.flush()
        return TrainResult(out, reason, self.state)

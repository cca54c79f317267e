"""Samplers and data loaders.

A sampler turns a list of processed samples into a plan: an ordered list of
index batches covering every sample exactly once. The finite
:class:`DataLoader` walks that plan; :class:`StreamingDataLoader` applies the
same sampler to a bounded cache of streamed samples, which is what makes
custom batching compatible with unlimited data.
"""
from __future__ import annotations

import logging
import queue
import threading
from typing import Callable, Sequence

import numpy as np

from .data import End, StreamingDataset
from .errors import BadShard, ConfigError, ParseError, PgenError, SampleTooLong
from .pipeline import PAD, Batch, ProcessedSample, collate
from .registry import register

log = logging.getLogger(__name__)

Plan = list[list[int]]


def sequential_plan(n: int, batch_size: int) -> Plan:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [list(range(i, min(i + batch_size, n))) for i in range(0, n, batch_size)]


def shuffle_plan(n: int, batch_size: int, seed: int) -> Plan:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def token_budget_plan(lengths: Sequence[int], max_tokens: int, seed: int | None = None) -> Plan:
    """Pack length-sorted indices so ``len(batch) * max_len(batch) <= max_tokens``.

    With a ``seed`` the order of the finished batches is shuffled; batch
    contents do not depend on it.
    """
    for i, n in enumerate(lengths):
        if n > max_tokens:
            raise SampleTooLong(i, n, max_tokens)
    order = sorted(range(len(lengths)), key=lambda i: lengths[i])
    plan: Plan = []
    cur: list[int] = []
    cur_max = 0
    for i in order:
        longest = max(cur_max, lengths[i])
        if cur and (len(cur) + 1) * longest > max_tokens:
            plan.append(cur)
            cur, longest = [], lengths[i]
        cur.append(i)
        cur_max = longest
    if cur:
        plan.append(cur)
    if seed is not None:
        rng = np.random.default_rng(seed)
        plan = [plan[j] for j in rng.permutation(len(plan))]
    return plan


def sample_length(s: ProcessedSample) -> int:
    return max(len(s.src), len(s.tgt) if s.tgt is not None else 0)


class Sampler:
    """Base sampler. Subclasses implement :meth:`plan`."""

    def plan(self, samples: Sequence[ProcessedSample], epoch: int = 0) -> Plan:
        raise NotImplementedError

    def select(self, cache: Sequence[ProcessedSample], rng: np.random.Generator) -> list[int]:
        """Choose one batch of positions from a streaming cache."""
        plan = self.plan(cache, epoch=int(rng.integers(2**31)))
        return plan[0]


@register("sampler", "sequential")
class SequentialSampler(Sampler):
    def __init__(self, batch_size: int = 32):
        self.batch_size = batch_size

    def plan(self, samples, epoch=0):
        return sequential_plan(len(samples), self.batch_size)


@register("sampler", "shuffle")
class ShuffleSampler(Sampler):
    def __init__(self, batch_size: int = 32, seed: int = 0):
        self.batch_size = batch_size
        self.seed = seed

    def plan(self, samples, epoch=0):
        return shuffle_plan(len(samples), self.batch_size, self.seed + epoch)


@register("sampler", "token_budget")
class TokenBudgetSampler(Sampler):
    def __init__(self, max_tokens: int = 4096, seed: int | None = 0):
        self.max_tokens = max_tokens
        self.seed = seed

    def plan(self, samples, epoch=0):
        seed = None if self.seed is None else self.seed + epoch
        return token_budget_plan([sample_length(s) for s in samples], self.max_tokens, seed)

    def select(self, cache, rng):
        plan = token_budget_plan([sample_length(s) for s in cache], self.max_tokens)
        return plan[int(rng.integers(len(plan)))]


class DataLoader:
    """Serves collated batches from an in-memory list, one epoch at a time."""

    def __init__(self, samples: Sequence[ProcessedSample], sampler: Sampler,
                 collate_fn: Callable[[list[ProcessedSample]], Batch] = collate):
        self.samples = samples
        self.sampler = sampler
        self.collate_fn = collate_fn
        self.epoch = 0
        self.cursor = 0
        self._plan = sampler.plan(samples, 0)

    def set_epoch(self, epoch: int, cursor: int = 0) -> None:
        self.epoch = epoch
        self.cursor = cursor
        self._plan = self.sampler.plan(self.samples, epoch)

    def reset(self) -> None:
        self.set_epoch(self.epoch + 1)

    def next_batch(self):
        if self.cursor >= len(self._plan):
            return End
        idx = self._plan[self.cursor]
        self.cursor += 1
        return self.collate_fn([self.samples[i] for i in idx])

    def state(self) -> dict:
        return {"epoch": self.epoch, "cursor": self.cursor}

    def load_state(self, state: dict) -> None:
        self.set_epoch(state["epoch"], state["cursor"])

    def __iter__(self):
        while (b := self.next_batch()) is not End:
            yield b


def next_batch(loader):
    return loader.next_batch()


def shard_stream(sds: StreamingDataset, worker_id: int, num_workers: int) -> StreamingDataset:
    if num_workers < 1 or not 0 <= worker_id < num_workers:
        raise BadShard(f"worker_id {worker_id} out of range for {num_workers} workers")
    # positions compose: a shard of a shard keeps every W-th of its parent's lines
    return StreamingDataset(sds.uri, sds.parser,
                            num_shards=sds.num_shards * num_workers,
                            shard_id=sds.shard_id + sds.num_shards * worker_id)


class StreamingDataLoader:
    """Batches an unbounded stream through a fixed-capacity cache.

    The cache is filled to ``buffer_size`` samples, the sampler picks one
    batch out of it, the chosen slots leave, and the cache is refilled. Once
    the stream ends the cache is drained. ``peak_resident`` records the most
    samples held at once (cache plus the batch last handed out).
    """

    def __init__(self, dataset: StreamingDataset, sampler: Sampler, process: Callable[[dict], ProcessedSample],
                 buffer_size: int = 1024, seed: int = 0, on_error: str = "abort",
                 collate_fn: Callable[[list[ProcessedSample]], Batch] = collate):
        if buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        if on_error not in ("abort", "skip"):
            raise ConfigError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
        self.dataset = dataset
        self.sampler = sampler
        self.process = process
        self.buffer_size = buffer_size
        self.seed = seed
        self.on_error = on_error
        self.collate_fn = collate_fn
        self.epoch = 0
        self.skipped = 0
        self.peak_resident = 0
        self._rng = np.random.default_rng(seed)
        self._buffer: list[ProcessedSample] = []
        self._in_flight = 0

    @property
    def resident(self) -> int:
        return len(self._buffer) + self._in_flight

    def _pull(self):
        while True:
            try:
                s = self.dataset.next_sample()
                if s is End:
                    return End
                return self.process(s)
            except (ParseError, PgenError) as e:
                if self.on_error == "abort":
                    raise
                self.skipped += 1
                log.warning("skipping bad sample: %s", e)

    def _fill(self) -> None:
        while len(self._buffer) < self.buffer_size and not self.dataset.exhausted:
            s = self._pull()
            if s is End:
                break
            self._buffer.append(s)
            self.peak_resident = max(self.peak_resident, self.resident)

    def next_batch(self):
        self._in_flight = 0
        self._fill()
        if not self._buffer:
            return End
        picked = sorted(set(self.sampler.select(self._buffer, self._rng)))
        chosen = [self._buffer[i] for i in picked]
        keep = set(picked)
        self._buffer = [s for i, s in enumerate(self._buffer) if i not in keep]
        self._in_flight = len(chosen)
        self.peak_resident = max(self.peak_resident, self.resident)
        return self.collate_fn(chosen)

    def reset(self) -> None:
        self.epoch += 1
        self.dataset.reset()
        self._buffer = []
        self._in_flight = 0
        self._rng = np.random.default_rng(self.seed + self.epoch)

    def __iter__(self):
        while (b := self.next_batch()) is not End:
            yield b


def streaming_next_batch(loader: StreamingDataLoader):
    return loader.next_batch()


class Prefetcher:
    """Runs ``loader.next_batch`` on a background thread, two batches ahead."""

    def __init__(self, loader, depth: int = 2):
        self.loader = loader
        self.depth = depth
        self._start()

    def _start(self) -> None:
        self._queue: queue.Queue = queue.Queue(maxsize=self.depth)
        self._done = False
        self._stop = False
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def reset(self) -> None:
        """Stop the worker, rewind the wrapped loader and start over."""
        self._stop = True
        while self._thread.is_alive():
            try:
                self._queue.get(timeout=0.01)
            except queue.Empty:
                pass
        self.loader.reset()
        self._start()

    def _run(self) -> None:
        while not self._stop:
            try:
                b = self.loader.next_batch()
            except BaseException as e:  # handed to the consumer
                self._queue.put(e)
                return
            self._queue.put(b)
            if b is End:
                return

    def next_batch(self):
        if self._done:
            return End
        item = self._queue.get()
        if item is End:
            self._done = True
        if isinstance(item, BaseException):
            raise item
        return item

    def __iter__(self):
        while (b := self.next_batch()) is not End:
            yield b


@register("dataloader", "in_memory")
def in_memory_loader(samples, sampler, pad_id: int = PAD):
    return DataLoader(samples, sampler, lambda s: collate(s, pad_id))


@register("dataloader", "streaming")
def streaming_loader(dataset, sampler, process, buffer_size: int = 1024, num_workers: int = 1,
                     worker_id: int = 0, prefetch: bool = False, seed: int = 0, on_error: str = "abort"):
    if num_workers > 1:
        dataset = shard_stream(dataset, worker_id, num_workers)
    loader = StreamingDataLoader(dataset, sampler, process, buffer_size, seed, on_error)
    return Prefetcher(loader) if prefetch else loader

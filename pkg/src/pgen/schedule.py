"""Rate schedulers: any scalar hyper-parameter as a function of the update step."""
from __future__ import annotations

from typing import Mapping

from .errors import UnknownPlugin, UnknownSchedule
from .registry import REGISTRY, register


class RateScheduler:
    def __call__(self, step: int) -> float:
        raise NotImplementedError


@register("rate_scheduler", "noam")
class NoamScheduler(RateScheduler):
    """``factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""

    def __init__(self, d_model: int, warmup: int = 4000, factor: float = 1.0):
        self.d_model = d_model
        self.warmup = warmup
        self.factor = factor

    def __call__(self, step):
        step = max(step, 1)
        return self.factor * self.d_model ** -0.5 * min(step ** -0.5, step * self.warmup ** -1.5)


@register("rate_scheduler", "linear")
class LinearScheduler(RateScheduler):
    def __init__(self, start: float, end: float, total: int):
        self.start = start
        self.end = end
        self.total = total

    def __call__(self, step):
        return self.start + (self.end - self.start) * min(1.0, step / self.total)


@register("rate_scheduler", "constant")
class ConstantScheduler(RateScheduler):
    def __init__(self, value: float):
        self.value = value

    def __call__(self, step):
        return self.value


def build_scheduler(config) -> RateScheduler:
    """Accept a scheduler, a bare number (constant) or a ``{class: ...}`` mapping."""
    if isinstance(config, RateScheduler):
        return config
    if isinstance(config, (int, float)) and not isinstance(config, bool):
        return ConstantScheduler(float(config))
    if isinstance(config, Mapping):
        try:
            return REGISTRY.create("rate_scheduler", config)
        except UnknownPlugin as e:
            raise UnknownSchedule(str(e)) from None
    raise UnknownSchedule(f"cannot build a rate schedule from {config!r}")


def rate(config, step: int) -> float:
    if step < 1:
        raise ValueError("step must be >= 1")
    return build_scheduler(config)(step)

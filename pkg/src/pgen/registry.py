"""Plugin registry: maps (kind, name) to factories so every component is
buildable from a ``{class: <name>, ...}`` config subtree."""
from __future__ import annotations

import inspect
import threading
from typing import Any, Callable, Mapping

from .errors import ConfigError, DuplicateRegistration, RegistryFrozen, UnknownPlugin

KINDS = (
    "dataset",
    "sampler",
    "dataloader",
    "tokenizer",
    "model",
    "generator",
    "criterion",
    "search",
    "optimizer",
    "rate_scheduler",
    "trainer",
    "evaluator",
    "metric",
)


def _check_kind(kind: str) -> None:
    if kind not in KINDS:
        raise UnknownPlugin(f"unknown plugin kind {kind!r}")


def _check_params(name: str, factory: Callable, params: Mapping[str, Any]) -> None:
    try:
        sig = inspect.signature(factory)
    except (TypeError, ValueError):  # builtins without a signature
        return
    accepted = {}
    for p in sig.parameters.values():
        if p.kind is p.VAR_KEYWORD:
            return
        if p.kind in (p.POSITIONAL_OR_KEYWORD, p.KEYWORD_ONLY):
            accepted[p.name] = p
    extra = sorted(set(params) - set(accepted))
    if extra:
        raise ConfigError(f"{name}: unknown config key(s) {extra}; accepted: {sorted(accepted)}")
    missing = sorted(k for k, p in accepted.items() if p.default is p.empty and k not in params)
    if missing:
        raise ConfigError(f"{name}: missing required config key(s) {missing}")


class Registry:
    """A (kind, name) -> factory table.

    Registration is additive only: registering an existing pair is an error.
    The registry freezes on the first :meth:`create`; later registrations
    raise :class:`RegistryFrozen` so a run cannot change its own plugin set.
    """

    def __init__(self):
        self._entries: dict[str, dict[str, Callable]] = {k: {} for k in KINDS}
        self._frozen = False
        self._lock = threading.Lock()

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> None:
        self._frozen = True

    def register(self, kind: str, name: str, factory: Callable | None = None):
        """Register ``factory`` under (kind, name).

        Usable directly or as a decorator when ``factory`` is omitted.
        """
        _check_kind(kind)
        if not isinstance(name, str) or not name.isidentifier():
            raise ConfigError(f"plugin name must be a non-empty identifier, got {name!r}")

        def add(f: Callable) -> Callable:
            with self._lock:
                if self._frozen:
                    raise RegistryFrozen(f"cannot register {kind}/{name}: registry is frozen")
                if name in self._entries[kind]:
                    raise DuplicateRegistration(f"{kind} {name!r} is already registered")
                self._entries[kind][name] = f
            return f

        if factory is None:
            return add
        add(factory)
        return None

    def list_registered(self, kind: str) -> set[str]:
        _check_kind(kind)
        return set(self._entries[kind])

    def get(self, kind: str, name: str) -> Callable:
        _check_kind(kind)
        try:
            return self._entries[kind][name]
        except KeyError:
            known = sorted(self._entries[kind])
            raise UnknownPlugin(f"no {kind} named {name!r}; registered: {known}") from None

    def create(self, kind: str, config: Mapping[str, Any], **context: Any) -> Any:
        """Build an instance from ``{class: name, **params}``.

        ``context`` carries values the caller injects (e.g. ``vocab_size``);
        they take part in the same strict key check as ``params``.
        """
        if not isinstance(config, Mapping) or "class" not in config:
            raise ConfigError(f"{kind} config needs a 'class' key, got {config!r}")
        self._frozen = True
        factory = self.get(kind, config["class"])
        params = {k: v for k, v in config.items() if k != "class"}
        clash = set(params) & set(context)
        if clash:
            raise ConfigError(f"{kind}.{config['class']}: keys {sorted(clash)} are set by the caller")
        params.update(context)
        _check_params(f"{kind}.{config['class']}", factory, params)
        return factory(**params)


REGISTRY = Registry()
register = REGISTRY.register
create = REGISTRY.create
list_registered = REGISTRY.list_registered

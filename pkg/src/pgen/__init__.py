"""pgen: parallel and autoregressive sequence generation on numpy.

Importing the package registers every built-in plugin.
"""
from . import (  # noqa: F401  (imported for plugin registration)
    batching,
    checkpoint,
    criterion,
    data,
    evaluation,
    generator,
    io,
    model,
    pipeline,
    schedule,
    search,
    tensor,
    trainer,
)
from .registry import KINDS, REGISTRY, Registry, create, list_registered, register

__version__ = "0.1.0"

__all__ = ["KINDS", "REGISTRY", "Registry", "create", "list_registered", "register", "__version__"]

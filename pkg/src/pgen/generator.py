"""Inference wrapper: model + search + detokenization, gradient-free."""
from __future__ import annotations

from typing import Sequence

from . import tensor as T
from .io import AsyncWriter
from .pipeline import RESERVED, BpeModel, Batch, Vocabulary, bpe_decode
from .registry import register


def ids_to_text(ids: Sequence[int], vocab: Vocabulary) -> str:
    return bpe_decode([vocab.itos[i] for i in ids if i >= len(RESERVED)])


def generate(model, search, vocab: Vocabulary, bpe: BpeModel | None, batch: Batch) -> list[str]:
    """Decode each source row of ``batch`` and return detokenized strings."""
    out = []
    with T.no_grad():
        for row, n in zip(batch.src_tokens, batch.src_lengths):
            ids = search(model, row[: int(n)].tolist())
            out.append(ids_to_text(ids, vocab))
    return out


@register("generator", "sequence")
class SequenceGenerator:
    def __init__(self, model, search, vocab: Vocabulary, bpe: BpeModel | None = None):
        self.model = model
        self.search = search
        self.vocab = vocab
        self.bpe = bpe
        self.decode_calls = 0

    def __call__(self, batch: Batch) -> list[str]:
        self.decode_calls += 1
        return generate(self.model, self.search, self.vocab, self.bpe, batch)

    def generate_all(self, batches) -> list[str]:
        out: list[str] = []
        for b in batches:
            out.extend(self(b))
        return out


def write_lines(lines: Sequence[str], uri: str) -> None:
    """Write one line per hypothesis through the async writer."""
    with AsyncWriter(uri) as w:
        for line in lines:
            w.submit((line.replace("\n", " ") + "\n").encode("utf-8"))

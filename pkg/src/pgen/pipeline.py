"""Tokenization and the offline/online processing split.

``data_collate`` turns one raw sample into id lists and is meant to run once
per sample before training. ``collate`` pads a list of processed samples into
a :class:`Batch` and runs per batch.
"""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyBatch, EmptyCorpus, FormatError, MissingField
from .io import read_lines
from .registry import register

PAD, UNK, BOS, EOS, MASK = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<s>", "</s>", "<mask>")
EOW = "</w>"


class Vocabulary:
    def __init__(self, tokens: Sequence[str] = (), counts: Sequence[int] | None = None):
        self.itos: list[str] = list(RESERVED)
        self.counts: list[int] = [0] * len(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        counts = counts if counts is not None else [0] * len(tokens)
        for tok, c in zip(tokens, counts):
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
            self.counts.append(c)

    pad = PAD
    unk = UNK
    bos = BOS
    eos = EOS
    mask = MASK

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok, c in zip(self.itos, self.counts):
                f.write(f"{tok}\t{c}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        toks, counts = [], []
        for i, line in enumerate(read_lines(path), start=1):
            tok, sep, c = line.rpartition("\t")
            if not sep or not c.isdigit():
                raise FormatError(f"{path}:{i}: expected '<token>\\t<count>'")
            toks.append(tok)
            counts.append(int(c))
        if tuple(toks[: len(RESERVED)]) != RESERVED:
            raise FormatError(f"{path}: reserved tokens must come first")
        return cls(toks[len(RESERVED):], counts[len(RESERVED):])


def build_vocab(token_streams: Iterable[Iterable[str]], min_count: int = 1) -> Vocabulary:
    counts: collections.Counter = collections.Counter()
    for stream in token_streams:
        counts.update(stream)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(kept, [counts[t] for t in kept])


@dataclass
class BpeModel:
    merges: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.merges = [tuple(m) for m in self.merges]
        self.ranks = {m: i for i, m in enumerate(self.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def encode_word(self, word: str) -> tuple[str, ...]:
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        symbols = list(word[:-1]) + [word[-1] + EOW]
        # Merging the lowest-ranked adjacent pair first is equivalent to
        # replaying the merge list in order.
        while len(symbols) > 1:
            best, best_rank = None, None
            for i in range(len(symbols) - 1):
                r = self.ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = (symbols[i], symbols[i + 1]), r
            if best is None:
                break
            symbols = _merge_pair(symbols, best)
        out = tuple(symbols)
        self._cache[word] = out
        return out

    def encode(self, text: str) -> list[str]:
        out: list[str] = []
        for w in text.split():
            out.extend(self.encode_word(w))
        return out

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#merges:{len(self.merges)}\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path: str) -> "BpeModel":
        lines = read_lines(path)
        if not lines or not lines[0].startswith("#merges:"):
            raise FormatError(f"{path}: missing '#merges:<N>' header")
        n = int(lines[0][len("#merges:"):])
        merges = []
        for i, line in enumerate(lines[1:], start=2):
            parts = line.split(" ")
            if len(parts) != 2:
                raise FormatError(f"{path}:{i}: expected two space-separated symbols")
            merges.append((parts[0], parts[1]))
        if len(merges) != n:
            raise FormatError(f"{path}: header says {n} merges, found {len(merges)}")
        return cls(merges)


def _merge_pair(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    a, b = pair
    out, i = [], 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def bpe_train(corpus: Iterable[str], num_merges: int) -> BpeModel:
    """Learn ``num_merges`` merges from whitespace-split words.

    Each step merges the most frequent adjacent symbol pair; equal counts go
    to the lexicographically smaller pair. Stops early once every word is a
    single symbol.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    freq = collections.Counter()
    for chunk in corpus:
        freq.update(chunk.split())
    if not freq:
        raise EmptyCorpus("cannot train BPE on an empty corpus")
    words = [[list(w[:-1]) + [w[-1] + EOW], c] for w, c in freq.items()]
    merges = []
    for _ in range(num_merges):
        pairs = collections.Counter()
        for syms, c in words:
            for i in range(len(syms) - 1):
                pairs[syms[i], syms[i + 1]] += c
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        merges.append(best)
        for entry in words:
            if len(entry[0]) > 1:
                entry[0] = _merge_pair(entry[0], best)
    return BpeModel(merges)


def bpe_encode(model: BpeModel, text: str) -> list[str]:
    return model.encode(text)


def bpe_decode(tokens: Sequence[str]) -> str:
    return "".join(tokens).replace(EOW, " ").rstrip(" ")


@dataclass(frozen=True)
class FieldSpec:
    """Which sample fields feed the source and target sides.

    With ``inference=True`` a missing target field is tolerated.
    """

    src: str = "src"
    tgt: str = "tgt"
    inference: bool = False


@dataclass
class ProcessedSample:
    src: list[int]
    tgt: list[int] | None = None


def data_collate(sample: dict, vocab: Vocabulary, bpe: BpeModel, spec: FieldSpec = FieldSpec()) -> ProcessedSample:
    if spec.src not in sample:
        raise MissingField(f"sample has no field {spec.src!r}")
    src = vocab.encode(bpe.encode(str(sample[spec.src])))
    if spec.tgt not in sample:
        if not spec.inference:
            raise MissingField(f"sample has no field {spec.tgt!r}")
        return ProcessedSample(src)
    tgt = [BOS] + vocab.encode(bpe.encode(str(sample[spec.tgt]))) + [EOS]
    return ProcessedSample(src, tgt)


@dataclass
class Batch:
    src_tokens: np.ndarray  # [B, S] int64
    src_lengths: np.ndarray  # [B]
    tgt_tokens: np.ndarray | None = None  # [B, T]
    tgt_lengths: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.src_tokens.shape[0]

    @property
    def src_mask(self) -> np.ndarray:
        """True at real (non-pad) source positions."""
        return np.arange(self.src_tokens.shape[1])[None, :] < self.src_lengths[:, None]

    @property
    def tgt_mask(self) -> np.ndarray | None:
        if self.tgt_tokens is None:
            return None
        return np.arange(self.tgt_tokens.shape[1])[None, :] < self.tgt_lengths[:, None]

    def num_tokens(self) -> int:
        n = int(self.src_lengths.sum())
        if self.tgt_lengths is not None:
            n += int(self.tgt_lengths.sum())
        return n


def pad_rows(rows: Sequence[Sequence[int]], pad_id: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    width = int(lengths.max()) if len(rows) else 0
    out = np.full((len(rows), width), pad_id, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out, lengths


def collate(samples: Sequence[ProcessedSample], pad_id: int = PAD) -> Batch:
    if not samples:
        raise EmptyBatch("cannot collate an empty list of samples")
    src, src_len = pad_rows([s.src for s in samples], pad_id)
    if all(s.tgt is not None for s in samples):
        tgt, tgt_len = pad_rows([s.tgt for s in samples], pad_id)
        return Batch(src, src_len, tgt, tgt_len)
    return Batch(src, src_len)


@register("tokenizer", "bpe")
def bpe_tokenizer(path: str):
    return BpeModel.load(path)

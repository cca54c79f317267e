"""Shared fixtures-by-function for the test suite: toy data, tiny models, finite differences."""
from __future__ import annotations

import numpy as np

from pgen import tensor as T
from pgen.model import NATransformer, Transformer, TransformerConfig
from pgen.pipeline import BOS, EOS, ProcessedSample, bpe_train, build_vocab, collate, data_collate

LETTERS = [chr(ord("a") + i) for i in range(15)]


def copy_pairs(n: int, rng: np.random.Generator, lo: int = 5, hi: int = 12) -> list[dict]:
    """Synthetic copy task: target equals source, lengths in [lo, hi]."""
    out = []
    for _ in range(n):
        s = " ".join(rng.choice(LETTERS, int(rng.integers(lo, hi + 1))))
        out.append({"src": s, "tgt": s})
    return out


def copy_task(n_train: int = 5000, n_test: int = 200, seed: int = 0):
    rng = np.random.default_rng(seed)
    train, test = copy_pairs(n_train, rng), copy_pairs(n_test, rng)
    bpe = bpe_train([s["src"] for s in train], 0)
    vocab = build_vocab([bpe.encode(s["src"]) for s in train])
    return train, test, bpe, vocab


def tiny_config(vocab_size: int = 11, cls=Transformer, **kw):
    args = dict(d_model=8, n_heads=2, n_layers=1, d_ff=16, dtype="float64", seed=0)
    args.update(kw)
    return cls(TransformerConfig(vocab_size, **args))


def random_batch(rng, n=3, vocab_size=11, lo=2, hi=6):
    samples = []
    for _ in range(n):
        src = rng.integers(5, vocab_size, size=int(rng.integers(lo, hi))).tolist()
        tgt = [BOS] + rng.integers(5, vocab_size, size=int(rng.integers(lo, hi))).tolist() + [EOS]
        samples.append(ProcessedSample(src, tgt))
    return collate(samples)


def numeric_grad(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    old = arr[idx]
    arr[idx] = old + h
    with T.no_grad():
        fp = f()
    arr[idx] = old - h
    with T.no_grad():
        fm = f()
    arr[idx] = old
    return (fp - fm) / (2 * h)


def rel_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_grads(loss_fn, tensors: dict, max_entries: int | None = None, seed: int = 0) -> float:
    """Worst relative error between backward and central differences.

    ``loss_fn`` returns a scalar Tensor; ``tensors`` are leaves with
    ``requires_grad``. With ``max_entries`` only that many random entries per
    tensor are probed.
    """
    for t in tensors.values():
        t.grad = None
    T.backward(loss_fn())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors.values():
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        idxs = list(np.ndindex(t.data.shape))
        if max_entries is not None and len(idxs) > max_entries:
            idxs = [idxs[i] for i in rng.choice(len(idxs), max_entries, replace=False)]
        for idx in idxs:
            n = numeric_grad(lambda: loss_fn().item(), t.data, idx)
            worst = max(worst, rel_error(float(grad[idx]), n))
    return worst


def encode_all(samples, vocab, bpe, inference=False):
    from pgen.pipeline import FieldSpec

    return [data_collate(s, vocab, bpe, FieldSpec(inference=inference)) for s in samples]


__all__ = ["NATransformer", "Transformer", "TransformerConfig", "copy_task", "copy_pairs", "tiny_config",
           "random_batch", "check_grads", "numeric_grad", "rel_error", "encode_all"]


def _leaf(rng, *shape):
    return T.Tensor(rng.normal(size=shape), requires_grad=True)


def _project(y: T.Tensor, seed: int = 99) -> T.Tensor:
    """Scalarize with a fixed random projection so every output entry matters."""
    r = np.random.default_rng(seed).normal(size=y.shape)
    return T.sum(T.mul_const(y, r))


def primitive_cases(seed: int = 0):
    """(name, leaves, loss_fn) for every differentiable tensor primitive."""
    rng = np.random.default_rng(seed)
    cases = []

    def case(name, leaves, f):
        cases.append((name, leaves, lambda: _project(f(*leaves.values()))))

    case("add", {"a": _leaf(rng, 3, 4), "b": _leaf(rng, 3, 4)}, T.add)
    case("add_row_bias", {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 4)}, T.add)
    case("mul", {"a": _leaf(rng, 3, 4), "b": _leaf(rng, 3, 4)}, T.mul)
    case("scale", {"a": _leaf(rng, 5)}, lambda a: T.scale(a, -1.7))
    c = rng.normal(size=(3, 2))
    case("add_const", {"a": _leaf(rng, 3, 2)}, lambda a: T.add_const(a, c))
    case("mul_const", {"a": _leaf(rng, 3, 2)}, lambda a: T.mul_const(a, c))
    case("matmul", {"a": _leaf(rng, 3, 4), "b": _leaf(rng, 4, 2)}, T.matmul)
    case("matmul_shared", {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 4, 2)}, T.matmul)
    case("matmul_batched", {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 2, 4, 5)}, T.matmul)
    case("transpose", {"a": _leaf(rng, 2, 3, 4)}, T.transpose)
    case("reshape", {"a": _leaf(rng, 2, 6)}, lambda a: T.reshape(a, (3, 4)))
    case("split_heads", {"a": _leaf(rng, 2, 3, 4)}, lambda a: T.split_heads(a, 2))
    case("merge_heads", {"a": _leaf(rng, 4, 3, 2)}, lambda a: T.merge_heads(a, 2))
    case("concat", {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 2, 1, 4)}, lambda a, b: T.concat(a, b, 1))
    case("select_rows", {"a": _leaf(rng, 4, 3)}, lambda a: T.select_rows(a, np.array([2, 0, 2, 3])))
    # keep inputs away from the kink at 0
    relu_in = T.Tensor(rng.choice([-1, 1], size=(3, 4)) * rng.uniform(0.2, 1.0, size=(3, 4)), requires_grad=True)
    case("relu", {"a": relu_in}, T.relu)
    case("dropout", {"a": _leaf(rng, 3, 4)}, lambda a: T.dropout(a, 0.3, np.random.default_rng(5), True))
    case("softmax", {"a": _leaf(rng, 2, 3, 5)}, T.softmax)
    case("log_softmax", {"a": _leaf(rng, 3, 5)}, T.log_softmax)
    case("layer_norm", {"x": _leaf(rng, 2, 3, 6), "g": _leaf(rng, 6), "b": _leaf(rng, 6)}, T.layer_norm)
    ids = np.array([[0, 3, 3], [1, 2, 0]])
    case("embedding", {"w": _leaf(rng, 4, 5)}, lambda w: T.embedding(w, ids))
    case("sum", {"a": _leaf(rng, 2, 3)}, lambda a: T.scale(T.sum(a), 1.0))
    case("mean", {"a": _leaf(rng, 2, 3)}, lambda a: T.mean(a))
    case("weighted_sum", {"a": _leaf(rng), "b": _leaf(rng)}, lambda a, b: T.weighted_sum([a, b], [0.3, -2.0]))
    m = np.array([[1, 1, 0], [1, 0, 0]], dtype=bool)
    case("masked_mean_rows", {"a": _leaf(rng, 2, 3, 4)}, lambda a: T.masked_mean_rows(a, m))
    tg = np.array([1, 0, 3, 2, 4])
    case("cross_entropy_smoothed", {"a": _leaf(rng, 5, 6)},
         lambda a: T.cross_entropy_smoothed(a, tg, 0.1, ignore_id=0))
    return cases


class TableState:
    def __init__(self, prefixes):
        self.prefixes = prefixes

    def select(self, rows):
        return TableState([self.prefixes[i] for i in rows])


class TableModel:
    """Incremental-decoding stand-in: next-token logits are a function of the prefix.

    ``fn(prefix) -> logits[V]`` where the prefix starts with bos.
    """

    def __init__(self, fn):
        self.fn = fn

    def begin(self, src):
        return TableState([[]])

    def step(self, state, tokens):
        prefixes = [p + [int(t)] for p, t in zip(state.prefixes, tokens)]
        return np.stack([self.fn(p) for p in prefixes]), TableState(prefixes)


def sequence_scores(model, src, vocab_size: int, max_len: int):
    """Brute force: every hypothesis reachable within ``max_len`` steps with its log-probability.

    Returns (tokens, score, finished) triples; finished ones end with eos
    (excluded from tokens), unfinished ones have exactly ``max_len`` tokens.
    """
    import itertools

    def logp(prefix_tokens):
        state = model.begin(np.asarray(src)[None])
        total, last = [], BOS
        for tok in prefix_tokens:
            logits, state = model.step(state, [last])
            z = logits[0].astype(np.float64)
            z = z - z.max()
            total.append(z[tok] - np.log(np.exp(z).sum()))
            last = tok
        return float(np.sum(total))

    out = []
    symbols = [v for v in range(vocab_size) if v != EOS]
    for n in range(max_len + 1):
        for seq in itertools.product(symbols, repeat=n):
            seq = list(seq)
            if n < max_len:
                out.append((seq, logp(seq + [EOS]), True))
            else:
                out.append((seq, logp(seq), False))
    return out


class ListLoader:
    """Cycles through a fixed list of batches; ``state``/``load_state`` keep the cursor."""

    def __init__(self, batches):
        self.batches = list(batches)
        self.cursor = 0

    def next_batch(self):
        from pgen.data import End

        if self.cursor >= len(self.batches):
            return End
        self.cursor += 1
        return self.batches[self.cursor - 1]

    def reset(self):
        self.cursor = 0

    def state(self):
        return {"cursor": self.cursor}

    def load_state(self, s):
        self.cursor = s["cursor"]


def regression_batches(n_batches: int, size: int, in_dim: int = 3, out_dim: int = 2, seed: int = 0):
    from pgen.criterion import ArrayBatch

    rng = np.random.default_rng(seed)
    return [ArrayBatch(rng.normal(size=(size, in_dim)), rng.normal(size=(size, out_dim))) for _ in range(n_batches)]


def merge_pairs(batches):
    from pgen.criterion import ArrayBatch

    return [ArrayBatch(np.concatenate([a.x, b.x]), np.concatenate([a.y, b.y]))
            for a, b in zip(batches[::2], batches[1::2])]

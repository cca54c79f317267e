"""Encoder-decoder transformers: an autoregressive model trained with
teacher forcing, and a parallel (non-autoregressive) model that predicts
every target position at once plus the target length.

Parameters live in a flat ``name -> Tensor`` dict named
``<block>.<layer>.<name>``, which is also the checkpoint layout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, PositionOverflow
from .pipeline import BOS, EOS, MASK, PAD, Batch
from .registry import register
from .tensor import Tensor

NEG_INF = -1e9


@dataclass
class TransformerConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    max_positions: int = 256
    dropout: float = 0.0
    length_window: int = 10
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the 5 reserved ids")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")


def sinusoidal_table(n_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))



class Model:
    """Holds named parameters; subclasses define the forward computation."""

    params: dict[str, Tensor]

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = sorted(set(self.params) - set(arrays))
            extra = sorted(set(arrays) - set(self.params))
            raise ConfigError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for k, p in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != p.shape:
                raise ConfigError(f"{k}: shape {a.shape} does not match {p.shape}")
            p.data = a.astype(p.dtype).copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class _Seq2Seq(Model):
    autoregressive = True

    def __init__(self, cfg: TransformerConfig):
        self.cfg = cfg
        self.dtype = np.dtype(cfg.dtype)
        self.n_heads = cfg.n_heads
        self.pe = sinusoidal_table(cfg.max_positions, cfg.d_model).astype(self.dtype)
        rng = np.random.default_rng(cfg.seed)
        self.params = {}
        d, f, V = cfg.d_model, cfg.d_ff, cfg.vocab_size
        self._matrix(rng, "embed.tokens.weight", (V, d))
        for i in range(cfg.n_layers):
            self._block(rng, f"encoder.{i}", cross=False)
        self._ln("encoder.final.ln")
        for i in range(cfg.n_layers):
            self._block(rng, f"decoder.{i}", cross=True)
        self._ln("decoder.final.ln")
        self._matrix(rng, "output.final.proj_w", (d, V))
        self._bias("output.final.proj_b", V)

    # -- parameter construction
    def _matrix(self, rng, name, shape):
        bound = 1.0 / math.sqrt(self.cfg.d_model)
        self.params[name] = T.parameter(rng.uniform(-bound, bound, shape), self.dtype)

    def _bias(self, name, n):
        self.params[name] = T.parameter(np.zeros(n), self.dtype)

    def _ln(self, prefix):
        n = self.cfg.d_model
        self.params[prefix + "_g"] = T.parameter(np.ones(n), self.dtype)
        self.params[prefix + "_b"] = T.parameter(np.zeros(n), self.dtype)

    def _block(self, rng, prefix, cross):
        d, f = self.cfg.d_model, self.cfg.d_ff
        self._ln(f"{prefix}.ln1")
        for p in ("q", "k", "v", "o"):
            self._matrix(rng, f"{prefix}.{p}_w", (d, d))
            self._bias(f"{prefix}.{p}_b", d)
        if cross:
            self._ln(f"{prefix}.ln_cross")
            for p in ("cq", "ck", "cv", "co"):
                self._matrix(rng, f"{prefix}.{p}_w", (d, d))
                self._bias(f"{prefix}.{p}_b", d)
        self._ln(f"{prefix}.ln2")
        self._matrix(rng, f"{prefix}.ff1_w", (d, f))
        self._bias(f"{prefix}.ff1_b", f)
        self._matrix(rng, f"{prefix}.ff2_w", (f, d))
        self._bias(f"{prefix}.ff2_b", d)

    # -- building blocks
    def _linear(self, x, name):
        return T.add(T.matmul(x, self.params[name + "_w"]), self.params[name + "_b"])

    def _layer_norm(self, x, name):
        return T.layer_norm(x, self.params[name + "_g"], self.params[name + "_b"])

    def _embed(self, tokens: np.ndarray, start: int = 0) -> Tensor:
        B, L = tokens.shape
        if start + L > self.cfg.max_positions:
            raise PositionOverflow(f"position {start + L - 1} exceeds max_positions {self.cfg.max_positions}")
        x = T.scale(T.embedding(self.params["embed.tokens.weight"], tokens), math.sqrt(self.cfg.d_model))
        return T.add_const(x, np.broadcast_to(self.pe[start : start + L], x.shape))

    def _heads(self, x, name):
        return T.split_heads(self._linear(x, name), self.n_heads)

    def _attend(self, q, k, v, bias, training, rng):
        dh = q.shape[-1]
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(dh))
        if bias is not None:
            scores = T.add_const(scores, bias)
        attn = T.dropout(T.softmax(scores), self.cfg.dropout, rng, training)
        return T.matmul(attn, v)

    def _residual(self, x, sub, training, rng):
        return T.add(x, T.dropout(sub, self.cfg.dropout, rng, training))

    def _self_attention(self, x, prefix, bias, training, rng):
        h = self._layer_norm(x, f"{prefix}.ln1")
        ctx = self._attend(self._heads(h, f"{prefix}.q"), self._heads(h, f"{prefix}.k"),
                           self._heads(h, f"{prefix}.v"), bias, training, rng)
        return self._residual(x, self._linear(T.merge_heads(ctx, self.n_heads), f"{prefix}.o"), training, rng)

    def _cross_attention(self, x, prefix, mem_kv, bias, training, rng):
        h = self._layer_norm(x, f"{prefix}.ln_cross")
        k, v = mem_kv
        ctx = self._attend(self._heads(h, f"{prefix}.cq"), k, v, bias, training, rng)
        return self._residual(x, self._linear(T.merge_heads(ctx, self.n_heads), f"{prefix}.co"), training, rng)

    def _feed_forward(self, x, prefix, training, rng):
        h = self._layer_norm(x, f"{prefix}.ln2")
        h = T.dropout(T.relu(self._linear(h, f"{prefix}.ff1")), self.cfg.dropout, rng, training)
        return self._residual(x, self._linear(h, f"{prefix}.ff2"), training, rng)

    def _key_bias(self, key_mask: np.ndarray, n_query: int, causal: bool = False) -> np.ndarray:
        """Additive attention mask ``[B*H, n_query, K]``; ``key_mask`` is True at real keys."""
        B, K = key_mask.shape
        bias = np.where(key_mask[:, None, :], 0.0, NEG_INF).astype(self.dtype)
        bias = np.broadcast_to(bias, (B, n_query, K))
        if causal:
            future = np.triu(np.ones((n_query, K), dtype=bool), k=1)
            bias = np.where(future[None], NEG_INF, bias).astype(self.dtype)
        return np.repeat(bias, self.n_heads, axis=0)

    # -- encoder / decoder
    def encode(self, src_tokens: np.ndarray, src_mask: np.ndarray, training: bool = False, rng=None) -> Tensor:
        x = T.dropout(self._embed(src_tokens), self.cfg.dropout, rng, training)
        bias = self._key_bias(src_mask, src_tokens.shape[1])
        for i in range(self.cfg.n_layers):
            x = self._self_attention(x, f"encoder.{i}", bias, training, rng)
            x = self._feed_forward(x, f"encoder.{i}", training, rng)
        return self._layer_norm(x, "encoder.final.ln")

    def memory_kv(self, memory: Tensor) -> list[tuple[Tensor, Tensor]]:
        return [(self._heads(memory, f"decoder.{i}.ck"), self._heads(memory, f"decoder.{i}.cv"))
                for i in range(self.cfg.n_layers)]

    def _decode(self, dec_tokens, dec_mask, memory, src_mask, causal, training, rng) -> Tensor:
        L = dec_tokens.shape[1]
        y = T.dropout(self._embed(dec_tokens), self.cfg.dropout, rng, training)
        self_bias = self._key_bias(dec_mask, L, causal=causal)
        cross_bias = self._key_bias(src_mask, L)
        for i, kv in enumerate(self.memory_kv(memory)):
            y = self._self_attention(y, f"decoder.{i}", self_bias, training, rng)
            y = self._cross_attention(y, f"decoder.{i}", kv, cross_bias, training, rng)
            y = self._feed_forward(y, f"decoder.{i}", training, rng)
        return self._linear(self._layer_norm(y, "decoder.final.ln"), "output.final.proj")


@dataclass
class DecodeState:
    """Per-layer key/value caches for the consumed target prefix."""

    memory_kv: list[tuple[Tensor, Tensor]]
    cross_bias: np.ndarray  # [N*H, 1, S]
    self_kv: list[tuple[Tensor, Tensor] | None] = field(default_factory=list)
    position: int = 0
    n_heads: int = 1

    @property
    def size(self) -> int:
        return self.cross_bias.shape[0] // self.n_heads

    def cache_length(self) -> int:
        kv = self.self_kv[0] if self.self_kv else None
        return 0 if kv is None else kv[0].shape[1]

    def select(self, index) -> "DecodeState":
        """Keep (and possibly repeat) rows ``index`` of the batch."""
        index = np.asarray(index, dtype=np.int64)
        H = self.n_heads
        rows = (index[:, None] * H + np.arange(H)[None, :]).reshape(-1)

        def pick(t: Tensor) -> Tensor:
            return Tensor(t.data[rows])

        return DecodeState(
            memory_kv=[(pick(k), pick(v)) for k, v in self.memory_kv],
            cross_bias=self.cross_bias[rows],
            self_kv=[None if kv is None else (pick(kv[0]), pick(kv[1])) for kv in self.self_kv],
            position=self.position,
            n_heads=H,
        )


class Transformer(_Seq2Seq):
    """Autoregressive encoder-decoder with causal decoder self-attention."""

    autoregressive = True

    def forward(self, src_tokens, src_mask, prev_tokens, prev_mask=None, training=False, rng=None) -> Tensor:
        """Logits ``[B, T, V]``; row t conditions on ``prev_tokens[:, :t+1]``."""
        if prev_mask is None:
            prev_mask = np.ones(prev_tokens.shape, dtype=bool)
        if prev_tokens.shape[1] > self.cfg.max_positions:
            raise PositionOverflow(f"target length {prev_tokens.shape[1]} > max_positions {self.cfg.max_positions}")
        memory = self.encode(src_tokens, src_mask, training, rng)
        return self._decode(prev_tokens, prev_mask, memory, src_mask, True, training, rng)

    # -- incremental decoding
    def begin(self, src_tokens: np.ndarray, src_mask: np.ndarray | None = None) -> DecodeState:
        if src_mask is None:
            src_mask = np.ones(src_tokens.shape, dtype=bool)
        with T.no_grad():
            memory = self.encode(src_tokens, src_mask)
            kv = self.memory_kv(memory)
        return DecodeState(kv, self._key_bias(src_mask, 1), [None] * self.cfg.n_layers, 0, self.n_heads)

    def step(self, state: DecodeState, tokens) -> tuple[np.ndarray, DecodeState]:
        """Consume one token per row; return next-token logits ``[N, V]``."""
        tokens = np.asarray(tokens, dtype=np.int64).reshape(-1, 1)
        if state.position >= self.cfg.max_positions:
            raise PositionOverflow(f"decode position {state.position} reached max_positions {self.cfg.max_positions}")
        with T.no_grad():
            y = self._embed(tokens, state.position)
            new_kv = []
            for i, mem in enumerate(state.memory_kv):
                prefix = f"decoder.{i}"
                h = self._layer_norm(y, f"{prefix}.ln1")
                k, v = self._heads(h, f"{prefix}.k"), self._heads(h, f"{prefix}.v")
                past = state.self_kv[i]
                if past is not None:
                    k, v = T.concat(past[0], k), T.concat(past[1], v)
                new_kv.append((k, v))
                ctx = self._attend(self._heads(h, f"{prefix}.q"), k, v, None, False, None)
                y = T.add(y, self._linear(T.merge_heads(ctx, self.n_heads), f"{prefix}.o"))
                y = self._cross_attention(y, prefix, mem, state.cross_bias, False, None)
                y = self._feed_forward(y, prefix, False, None)
            logits = self._linear(self._layer_norm(y, "decoder.final.ln"), "output.final.proj")
        nxt = DecodeState(state.memory_kv, state.cross_bias, new_kv, state.position + 1, self.n_heads)
        return logits.data[:, 0, :], nxt


class NATransformer(_Seq2Seq):
    """Parallel decoder: every target position is predicted simultaneously.

    Decoder inputs are token ids where ``MASK`` plays the role of the learned
    placeholder; glancing training replaces some of them with gold tokens.
    """

    autoregressive = False

    def __init__(self, cfg: TransformerConfig):
        super().__init__(cfg)
        rng = np.random.default_rng(cfg.seed + 1)
        n = 2 * cfg.length_window + 1
        self._matrix(rng, "length.final.proj_w", (cfg.d_model, n))
        self._bias("length.final.proj_b", n)

    def forward(self, src_tokens, src_mask, dec_tokens, dec_mask=None, training=False, rng=None,
                memory: Tensor | None = None) -> Tensor:
        if dec_mask is None:
            dec_mask = np.ones(dec_tokens.shape, dtype=bool)
        if memory is None:
            memory = self.encode(src_tokens, src_mask, training, rng)
        return self._decode(dec_tokens, dec_mask, memory, src_mask, False, training, rng)

    def length_logits(self, memory: Tensor, src_mask: np.ndarray) -> Tensor:
        pooled = T.masked_mean_rows(memory, src_mask)
        return self._linear(pooled, "length.final.proj")

    def predict_length(self, memory: Tensor, src_mask: np.ndarray) -> np.ndarray:
        """Distribution over offsets ``-window..+window`` (target minus source length)."""
        with T.no_grad():
            return T.softmax(self.length_logits(memory, src_mask)).data

    def length_candidates(self, probs: np.ndarray, src_length: int, beam: int) -> list[int]:
        """Top-``beam`` target lengths for one row; ties go to the shorter offset."""
        W = self.cfg.length_window
        order = sorted(range(len(probs)), key=lambda j: (-probs[j], j))
        out: list[int] = []
        for j in order:
            L = max(1, src_length + j - W)
            if L not in out:
                out.append(L)
            if len(out) == beam:
                break
        return out

    def length_target(self, src_lengths: np.ndarray, tgt_lengths: np.ndarray) -> np.ndarray:
        W = self.cfg.length_window
        return np.clip(tgt_lengths - src_lengths, -W, W) + W


def nat_targets(batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """Strip bos/eos from ``batch.tgt_tokens``: returns (targets [B, L], lengths)."""
    tgt = batch.tgt_tokens[:, 1:].copy()
    lengths = batch.tgt_lengths - 2
    tgt[np.arange(tgt.shape[0]), lengths] = PAD  # the eos slot
    width = max(1, int(lengths.max()))
    return tgt[:, :width], lengths


def placeholders(lengths: np.ndarray, width: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    width = int(lengths.max()) if width is None else width
    mask = np.arange(width)[None, :] < lengths[:, None]
    return np.where(mask, MASK, PAD), mask


def ar_forward(model: Transformer, batch: Batch, training: bool = False, rng=None) -> Tensor:
    """Teacher-forced logits with ``batch.tgt_tokens`` as decoder input."""
    return model.forward(batch.src_tokens, batch.src_mask, batch.tgt_tokens, batch.tgt_mask, training, rng)


def ar_decode_step(model: Transformer, state: DecodeState, token) -> tuple[np.ndarray, DecodeState]:
    logits, nxt = model.step(state, np.atleast_1d(token))
    return (logits[0] if np.ndim(token) == 0 else logits), nxt


def nat_forward(model: NATransformer, src_tokens: np.ndarray, tgt_length: int, src_mask=None) -> Tensor:
    """All-placeholder parallel decoding pass, logits ``[B, L, V]``."""
    if tgt_length < 1:
        raise ValueError("tgt_length must be >= 1")
    if src_mask is None:
        src_mask = src_tokens != PAD
    B = src_tokens.shape[0]
    dec, dmask = placeholders(np.full(B, tgt_length))
    return model.forward(src_tokens, src_mask, dec, dmask)


def predict_length(model: NATransformer, memory: Tensor, src_mask: np.ndarray) -> np.ndarray:
    return model.predict_length(memory, src_mask)


@register("model", "linear")
class LinearModel(Model):
    """``y = x W + b``; a reference model for optimizer and trainer tests."""

    autoregressive = None

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0, dtype: str = "float64"):
        rng = np.random.default_rng(seed)
        self.params = {
            "linear.0.weight": T.parameter(rng.normal(size=(in_dim, out_dim)), dtype),
            "linear.0.bias": T.parameter(np.zeros(out_dim), dtype),
        }

    def forward(self, x: np.ndarray) -> Tensor:
        x = Tensor(np.asarray(x, dtype=self.params["linear.0.weight"].dtype))
        return T.add(T.matmul(x, self.params["linear.0.weight"]), self.params["linear.0.bias"])


def _transformer_factory(cls):
    def build(vocab_size: int, d_model: int = 32, n_heads: int = 4, n_layers: int = 2, d_ff: int = 64,
              max_positions: int = 256, dropout: float = 0.0, length_window: int = 10, seed: int = 0,
              dtype: str = "float32"):
        return cls(TransformerConfig(vocab_size, d_model, n_heads, n_layers, d_ff, max_positions,
                                     dropout, length_window, seed, dtype))

    return build


register("model", "transformer", _transformer_factory(Transformer))
register("model", "nat", _transformer_factory(NATransformer))

__all__ = ["TransformerConfig", "Transformer", "NATransformer", "LinearModel", "DecodeState",
           "ar_forward", "ar_decode_step", "nat_forward", "predict_length", "nat_targets",
           "placeholders", "BOS", "EOS"]

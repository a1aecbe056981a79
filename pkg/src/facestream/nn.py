"""Transformer building blocks on top of the tape engine.

Pre-norm residual blocks, multi-head attention with additive bias and boolean
masks, sinusoidal positions, and the ALiBi slope/bias tables used by the
condition predictor.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    ParamStore,
    Tensor,
    add,
    attention,
    gelu,
    layer_norm,
    matmul,
    reshape,
    swapaxes,
)


def glorot_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


def sinusoid_table(positions: np.ndarray, width: int) -> np.ndarray:
    """Interleaved (sin, cos) pairs: pair k oscillates at 1/10000^(2k/width)."""
    if width % 2 != 0:
        raise ValueError("sinusoid width must be even")
    positions = np.asarray(positions, dtype=np.float64)
    k = np.arange(width // 2)
    rates = 1.0 / np.power(10000.0, 2.0 * k / width)
    angles = positions[:, None] * rates[None, :]
    table = np.empty((positions.shape[0], width))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def alibi_slopes(num_heads: int) -> np.ndarray:
    """Geometric head slopes m_k = 2^(-8(k+1)/num_heads)."""
    if num_heads < 1:
        raise ValueError("num_heads must be >= 1")
    k = np.arange(1, num_heads + 1)
    return np.power(2.0, -8.0 * k / num_heads)


def alibi_bias(length: int, num_heads: int) -> np.ndarray:
    """Per-head causal distance penalty: bias[k][i, j] = -m_k * (i - j), j <= i.

    Entries above the diagonal are irrelevant (the causal mask removes them)
    and are left at the same linear expression.
    """
    slopes = alibi_slopes(num_heads)
    i = np.arange(length)[:, None]
    j = np.arange(length)[None, :]
    distance = (i - j).astype(np.float64)
    return -slopes[:, None, None] * distance[None, :, :]


def causal_mask(length: int) -> np.ndarray:
    """Boolean mask admitting keys at or before each query position."""
    return np.tril(np.ones((length, length), dtype=bool))


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = store.create(f"{name}.w", glorot_uniform(rng, d_in, d_out))
        self.b = store.create(f"{name}.b", np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = matmul(x, self.w)
        if self.b is not None:
            out = add(out, self.b)
        return out


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, width: int, eps: float = 1e-5):
        self.gain = store.create(f"{name}.gain", np.ones(width))
        self.bias = store.create(f"{name}.bias", np.zeros(width))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention:
    """Multi-head attention over (L, d) inputs; optionally cross-modal.

    ``bias`` is per-head additive (heads, L_q, L_k); ``mask`` is boolean
    (L_q, L_k), shared across heads.
    """

    def __init__(self, store: ParamStore, name: str, d_model: int, num_heads: int,
                 rng: np.random.Generator, d_kv: int | None = None):
        if d_model % num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        d_kv = d_model if d_kv is None else d_kv
        self.num_heads = num_heads
        self.head_dim = d_model // num_heads
        self.wq = Linear(store, f"{name}.wq", d_model, d_model, rng)
        self.wk = Linear(store, f"{name}.wk", d_kv, d_model, rng)
        self.wv = Linear(store, f"{name}.wv", d_kv, d_model, rng)
        self.wo = Linear(store, f"{name}.wo", d_model, d_model, rng)

    def _split(self, x: Tensor, length: int) -> Tensor:
        return swapaxes(reshape(x, (length, self.num_heads, self.head_dim)), 0, 1)

    def __call__(self, x_q: Tensor, x_kv: Tensor, bias=None, mask=None) -> Tensor:
        l_q = x_q.data.shape[0]
        l_k = x_kv.data.shape[0]
        q = self._split(self.wq(x_q), l_q)
        k = self._split(self.wk(x_kv), l_k)
        v = self._split(self.wv(x_kv), l_k)
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), (1, l_q, l_k))
        out = attention(q, k, v, bias=bias, mask=mask)
        merged = reshape(swapaxes(out, 0, 1), (l_q, self.num_heads * self.head_dim))
        return self.wo(merged)


class FeedForward:
    def __init__(self, store: ParamStore, name: str, d_model: int, d_hidden: int,
                 rng: np.random.Generator):
        self.lin1 = Linear(store, f"{name}.lin1", d_model, d_hidden, rng)
        self.lin2 = Linear(store, f"{name}.lin2", d_hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(gelu(self.lin1(x)))


class EncoderBlock:
    """Pre-norm self-attention + feed-forward residual block."""

    def __init__(self, store: ParamStore, name: str, d_model: int, num_heads: int,
                 d_ff: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d_model, num_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.ff = FeedForward(store, f"{name}.ff", d_model, d_ff, rng)

    def __call__(self, x: Tensor, bias=None, mask=None) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.attn(h, h, bias=bias, mask=mask))
        return add(x, self.ff(self.ln2(x)))


class DecoderBlock:
    """Pre-norm block: biased causal self-attention, cross-attention, feed-forward."""

    def __init__(self, store: ParamStore, name: str, d_model: int, num_heads: int,
                 d_ff: int, rng: np.random.Generator, d_cross: int):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d_model)
        self.self_attn = MultiHeadAttention(store, f"{name}.self_attn", d_model,
                                            num_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d_model)
        self.cross_attn = MultiHeadAttention(store, f"{name}.cross_attn", d_model,
                                             num_heads, rng, d_kv=d_cross)
        self.ln3 = LayerNorm(store, f"{name}.ln3", d_model)
        self.ff = FeedForward(store, f"{name}.ff", d_model, d_ff, rng)

    def __call__(self, x: Tensor, memory: Tensor, self_bias, self_mask,
                 cross_mask) -> Tensor:
        h = self.ln1(x)
        x = add(x, self.self_attn(h, h, bias=self_bias, mask=self_mask))
        x = add(x, self.cross_attn(self.ln2(x), memory, mask=cross_mask))
        return add(x, self.ff(self.ln3(x)))

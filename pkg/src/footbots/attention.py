"""Attention building blocks on top of :mod:`footbots.tensor`.

All blocks use the post-norm layout of the original Transformer. Inputs to
the attention blocks are batched sets ``[B, n, d]``; a 2-D ``[n, d]`` input
is treated as a batch of one.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .tensor import ContractError, DimensionError, Tensor

__all__ = [
    "FeedForward",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiAttentionBlockDecoder",
    "MultiHeadAttention",
    "PositionalEncoding",
    "SetAttentionBlock",
    "positional_encoding",
    "scaled_dot_attention",
    "xavier_uniform",
]


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Module:
    """Minimal parameter container.

    Parameters are :class:`Tensor` attributes with ``requires_grad``; child
    modules are discovered through attributes and lists of modules.
    """

    training = False

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float32):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(xavier_uniform(rng, d_in, d_out, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear expects width {self.d_in}, got shape {x.shape}")
        return tn.matmul(x, self.weight) + self.bias


class FeedForward(Module):
    """Two-layer position-wise network ``d_in -> d_hidden -> d_out`` with ReLU."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype=np.float32):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype)
        self.fc2 = Linear(d_hidden, d_out, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(tn.relu(self.fc1(x)))


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return tn.layer_norm(x, self.gain, self.bias, self.eps)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.rate).astype(x.dtype)
        return tn.mul(x, keep / x.dtype.type(1.0 - self.rate))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d_k)) v`` over the last two axes.

    Parameters
    ----------
    q : Tensor
        Queries ``[..., n, d_k]``.
    k : Tensor
        Keys ``[..., n_v, d_k]``.
    v : Tensor
        Values ``[..., n_v, d_v]``.
    return_weights : bool
        Also return the attention matrix ``[..., n, n_v]``.
    """
    q, k, v = (tn._as_tensor(a) for a in (q, k, v))
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape} does not match key width {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    perm = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    logits = tn.scale(tn.matmul(q, tn.transpose(k, perm)), 1.0 / math.sqrt(q.shape[-1]))
    weights = tn.softmax(logits, axis=-1)
    out = tn.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Multi-head attention with ``d_k = d_v = d / h`` by default."""

    def __init__(self, d: int, heads: int, rng, dtype=np.float32, d_k=None, d_v=None):
        if heads < 1:
            raise ContractError(f"head count must be >= 1, got {heads}")
        if d_k is None or d_v is None:
            if d % heads:
                raise ContractError(f"width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.d_k = d_k or d // heads
        self.d_v = d_v or d // heads
        self.q_proj = Linear(d, heads * self.d_k, rng, dtype)
        self.k_proj = Linear(d, heads * self.d_k, rng, dtype)
        self.v_proj = Linear(d, heads * self.d_v, rng, dtype)
        self.out_proj = Linear(heads * self.d_v, d, rng, dtype)
        self.last_weights: np.ndarray | None = None

    def _split(self, x: Tensor, width: int) -> Tensor:
        b, n, _ = x.shape
        return tn.transpose(tn.reshape(x, (b, n, self.heads, width)), (0, 2, 1, 3))

    def forward(self, queries: Tensor, keys_values: Tensor, keep_weights: bool = False) -> Tensor:
        squeeze = queries.ndim == 2
        if squeeze:
            queries = tn.reshape(queries, (1,) + queries.shape)
            keys_values = tn.reshape(keys_values, (1,) + keys_values.shape)
        if queries.shape[-1] != self.d or keys_values.shape[-1] != self.d:
            raise DimensionError(
                f"attention width {self.d} does not match inputs {queries.shape} / {keys_values.shape}"
            )
        if queries.shape[0] != keys_values.shape[0]:
            raise DimensionError(
                f"batch sizes differ: {queries.shape[0]} vs {keys_values.shape[0]}"
            )
        b, n, _ = queries.shape
        q = self._split(self.q_proj(queries), self.d_k)
        k = self._split(self.k_proj(keys_values), self.d_k)
        v = self._split(self.v_proj(keys_values), self.d_v)
        heads, weights = scaled_dot_attention(q, k, v, return_weights=True)
        if keep_weights:
            self.last_weights = weights.data
        merged = tn.reshape(tn.transpose(heads, (0, 2, 1, 3)), (b, n, self.heads * self.d_v))
        out = self.out_proj(merged)
        if squeeze:
            out = tn.reshape(out, out.shape[1:])
        return out


class SetAttentionBlock(Module):
    """Transformer encoder block without positional encoding.

    ``Y = LN(X + MHA(X, X))`` then ``LN(Y + FFN(Y))``; permutation
    equivariant over the set axis.
    """

    def __init__(self, d, heads, d_ff, rng, dtype=np.float32, dropout: float = 0.0):
        self.attn = MultiHeadAttention(d, heads, rng, dtype)
        self.ffn = FeedForward(d, d_ff, d, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.drop = Dropout(dropout, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm1(x + self.drop(self.attn(x, x)))
        return self.norm2(y + self.drop(self.ffn(y)))


class MultiAttentionBlockDecoder(Module):
    """Transformer decoder block: self-attention, cross-attention, FFN.

    No causal mask; every target row sees every other target row.
    """

    def __init__(self, d, heads, d_ff, rng, dtype=np.float32, dropout: float = 0.0):
        self.self_attn = MultiHeadAttention(d, heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(d, heads, rng, dtype)
        self.ffn = FeedForward(d, d_ff, d, rng, dtype)
        self.norm1 = LayerNorm(d, dtype)
        self.norm2 = LayerNorm(d, dtype)
        self.norm3 = LayerNorm(d, dtype)
        self.drop = Dropout(dropout, rng)

    def forward(self, target: Tensor, context: Tensor) -> Tensor:
        y1 = self.norm1(target + self.drop(self.self_attn(target, target)))
        y2 = self.norm2(y1 + self.drop(self.cross_attn(y1, context)))
        return self.norm3(y2 + self.drop(self.ffn(y2)))


def positional_encoding(length: int, d: int, max_len: int | None = None, dtype=np.float32):
    """Sinusoidal table ``[length, d]``; even columns sine, odd columns cosine."""
    if max_len is not None and length > max_len:
        raise ContractError(f"sequence length {length} exceeds positional table size {max_len}")
    if length < 0 or d < 1:
        raise ContractError(f"invalid positional table request ({length}, {d})")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d)
    rates = np.power(10000.0, -(2 * (i // 2)) / d)
    angles = pos * rates[None, :]
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class PositionalEncoding:
    """Precomputed sinusoidal table with a fixed maximum length."""

    def __init__(self, max_len: int, d: int, dtype=np.float32):
        self.max_len = max_len
        self.table = positional_encoding(max_len, d, dtype=dtype)

    def __call__(self, length: int) -> np.ndarray:
        if length > self.max_len:
            raise ContractError(
                f"sequence length {length} exceeds positional table size {self.max_len}"
            )
        return self.table[:length]

"""Transformer building blocks over :mod:`entsum.autograd` tensors.

Row-vector convention: activations are (positions, features) and weights
are (in_features, out_features).
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .autograd import Tensor, layer_norm, softmax, where_mask

Params = Mapping[str, Tensor]


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = x @ w
    return out if b is None else out + b


def ln(p: Params, prefix: str, x: Tensor, eps: float = 1e-5) -> Tensor:
    return layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"], eps)


def attention(
    p: Params,
    prefix: str,
    xq: Tensor,
    xkv: Tensor,
    n_heads: int,
    causal: bool = False,
) -> Tensor:
    """Multi-head scaled dot-product attention from ``xq`` onto ``xkv``."""
    tq, d = xq.shape
    tk = xkv.shape[0]
    dh = d // n_heads
    q = linear(xq, p[f"{prefix}.q"], p[f"{prefix}.q_b"]).reshape(tq, n_heads, dh).transpose(1, 0, 2)
    k = linear(xkv, p[f"{prefix}.k"], p[f"{prefix}.k_b"]).reshape(tk, n_heads, dh).transpose(1, 0, 2)
    v = linear(xkv, p[f"{prefix}.v"], p[f"{prefix}.v_b"]).reshape(tk, n_heads, dh).transpose(1, 0, 2)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    if causal:
        scores = where_mask(scores, causal_mask(tq, tk))
    ctx = softmax(scores, axis=-1) @ v
    return linear(ctx.transpose(1, 0, 2).reshape(tq, d), p[f"{prefix}.o"], p[f"{prefix}.o_b"])


def causal_mask(tq: int, tk: int) -> np.ndarray:
    """True where query i may attend key j (j <= i), aligned to the last key."""
    offset = tk - tq
    return np.tril(np.ones((tq, tk), dtype=bool), k=offset)


def feed_forward(p: Params, prefix: str, x: Tensor) -> Tensor:
    h = linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"]).relu()
    return linear(h, p[f"{prefix}.w2"], p[f"{prefix}.b2"])


def encoder_layer(p: Params, prefix: str, x: Tensor, n_heads: int, eps: float = 1e-5) -> Tensor:
    h = ln(p, f"{prefix}.ln1", x, eps)
    x = x + attention(p, f"{prefix}.attn", h, h, n_heads)
    return x + feed_forward(p, f"{prefix}.ff", ln(p, f"{prefix}.ln2", x, eps))


def decoder_layer(p: Params, prefix: str, x: Tensor, memory: Tensor, n_heads: int, eps: float = 1e-5) -> Tensor:
    h = ln(p, f"{prefix}.ln1", x, eps)
    x = x + attention(p, f"{prefix}.self_attn", h, h, n_heads, causal=True)
    x = x + attention(p, f"{prefix}.cross_attn", ln(p, f"{prefix}.ln2", x, eps), memory, n_heads)
    return x + feed_forward(p, f"{prefix}.ff", ln(p, f"{prefix}.ln3", x, eps))


# -- parameter shapes ----------------------------------------------------------------


def attention_shapes(prefix: str, d: int) -> dict[str, tuple]:
    out = {}
    for name in ("q", "k", "v", "o"):
        out[f"{prefix}.{name}"] = (d, d)
        out[f"{prefix}.{name}_b"] = (d,)
    return out


def ln_shapes(prefix: str, d: int) -> dict[str, tuple]:
    return {f"{prefix}.g": (d,), f"{prefix}.b": (d,)}


def ff_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple]:
    return {f"{prefix}.w1": (d, d_ff), f"{prefix}.b1": (d_ff,), f"{prefix}.w2": (d_ff, d), f"{prefix}.b2": (d,)}


def encoder_layer_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple]:
    return {
        **ln_shapes(f"{prefix}.ln1", d),
        **attention_shapes(f"{prefix}.attn", d),
        **ln_shapes(f"{prefix}.ln2", d),
        **ff_shapes(f"{prefix}.ff", d, d_ff),
    }


def decoder_layer_shapes(prefix: str, d: int, d_ff: int) -> dict[str, tuple]:
    return {
        **ln_shapes(f"{prefix}.ln1", d),
        **attention_shapes(f"{prefix}.self_attn", d),
        **ln_shapes(f"{prefix}.ln2", d),
        **attention_shapes(f"{prefix}.cross_attn", d),
        **ln_shapes(f"{prefix}.ln3", d),
        **ff_shapes(f"{prefix}.ff", d, d_ff),
    }

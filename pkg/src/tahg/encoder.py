"""Transformer encoder block: scaled dot-product attention, multi-head
attention, position-wise feed-forward, and the normalisation/residual wiring.

Blocks accept either a single sequence (N, d_m) or a batch of sequences
(B, N, d_m); all sequence-level math runs batched. Key padding is handled by
adding -1e9 to masked score columns before the softmax, which keeps the
all-masked corner finite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import (
    Tensor,
    add,
    concat_cols,
    dropout,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax_rows,
    take_rows,
    transpose,
)

MASK_NEG = -1e9


@dataclass
class EncoderBlockParams:
    """Per-head projections, output projection, feed-forward, two LN pairs."""

    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_u: Tensor
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    @property
    def num_heads(self) -> int:
        return len(self.w_q)

    def validate(self) -> None:
        d_m, d_k = self.w_q[0].shape
        d_v = self.w_v[0].shape[1]
        for w in self.w_q + self.w_k:
            if w.shape != (d_m, d_k):
                raise DimensionError(f"head projection shape {w.shape}, expected {(d_m, d_k)}")
        for w in self.w_v:
            if w.shape != (d_m, d_v):
                raise DimensionError(f"value projection shape {w.shape}, expected {(d_m, d_v)}")
        if self.w_u.shape != (self.num_heads * d_v, d_m):
            raise DimensionError(
                f"output projection shape {self.w_u.shape}, expected {(self.num_heads * d_v, d_m)}"
            )


def _additive_key_mask(mask: np.ndarray | None, batched: bool) -> Tensor | None:
    """0/1 key mask -> additive scores term broadcast over query positions."""
    if mask is None:
        return None
    m = np.asarray(mask, dtype=np.float64)
    bias = (m - 1.0) * (-MASK_NEG)  # 0 where real, -1e9 where padded
    if batched:
        if bias.ndim == 1:
            bias = bias[None, :]
        return Tensor(bias[:, None, :])
    if bias.ndim != 1:
        raise DimensionError(f"unbatched attention expects a 1-d key mask, got {bias.shape}")
    return Tensor(bias[None, :])


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V with optional key padding mask."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query width {q.shape} does not match key width {k.shape}")
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(q.shape[-1]))
    bias = _additive_key_mask(mask, batched=q.ndim == 3)
    if bias is not None:
        scores = add(scores, bias)
    return matmul(softmax_rows(scores), v)


def multi_head_attention(x: Tensor, params: EncoderBlockParams, mask: np.ndarray | None = None) -> Tensor:
    """Independent heads on shared input, concatenated and projected."""
    heads = []
    for w_q, w_k, w_v in zip(params.w_q, params.w_k, params.w_v):
        heads.append(attention(matmul(x, w_q), matmul(x, w_k), matmul(x, w_v), mask))
    return matmul(concat_cols(heads), params.w_u)


def feed_forward(x: Tensor, params: EncoderBlockParams) -> Tensor:
    hidden = relu(add(matmul(x, params.w_1), params.b_1))
    return add(matmul(hidden, params.w_2), params.b_2)


def encoder_block(
    x: Tensor,
    params: EncoderBlockParams,
    mask: np.ndarray | None = None,
    dropout_p: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    pre_ln: bool = True,
) -> Tensor:
    """One attention + feed-forward block with residuals.

    pre_ln=True normalises before each sub-block and leaves the residual
    stream untouched (a zeroed feed-forward makes the block output equal the
    post-attention stream). pre_ln=False is the strict post-norm variant that
    normalises after each residual sum instead.
    """
    if pre_ln:
        attn_in = layer_norm(x, params.ln1_gain, params.ln1_bias)
        h = dropout(multi_head_attention(attn_in, params, mask), dropout_p, training, rng)
        x_mid = add(x, h)
        ffn_in = layer_norm(x_mid, params.ln2_gain, params.ln2_bias)
        f = dropout(feed_forward(ffn_in, params), dropout_p, training, rng)
        return add(x_mid, f)
    h = dropout(multi_head_attention(x, params, mask), dropout_p, training, rng)
    x_mid = layer_norm(add(x, h), params.ln1_gain, params.ln1_bias)
    f = dropout(feed_forward(x_mid, params), dropout_p, training, rng)
    return layer_norm(add(x_mid, f), params.ln2_gain, params.ln2_bias)


def pooled_cls(x: Tensor) -> Tensor:
    """Row-0 ([CLS]) vector per sequence: (N,d) -> (1,d), (B,N,d) -> (B,d)."""
    if x.ndim == 2:
        return take_rows(x, np.array([0]))
    if x.ndim == 3:
        b, n, d = x.shape
        flat = reshape(x, (b * n, d))
        return take_rows(flat, np.arange(b) * n)
    raise DimensionError(f"pooled_cls expects 2-d or 3-d input, got {x.shape}")


def pooled_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over token positions: (B,N,d) -> (B,d)."""
    m = np.asarray(mask, dtype=np.float64)
    if x.ndim == 2:
        m = m[None, :]
        x = reshape(x, (1,) + x.shape)
    weights = m / m.sum(axis=-1, keepdims=True)
    out = matmul(Tensor(weights[:, None, :]), x)  # (B,1,N) @ (B,N,d)
    return reshape(out, (out.shape[0], out.shape[-1]))

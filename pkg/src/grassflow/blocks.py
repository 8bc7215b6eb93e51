"""Sequence-mixing blocks: Grassmann mixing and the causal attention baseline.

Both blocks map [..., L, d] hidden states to the same shape and share the
post-norm feed-forward scaffold, so a language model can swap one for the
other with no other changes.

The Grassmann block pairs each position t with earlier positions t - delta
for a set of offsets, encodes each pair's reduced 2-plane as a normalized
Pluecker vector, projects back to model dimension, and fuses the aggregate
with the hidden state through a learned sigmoid gate. Assigning the pair
(t - delta, t) to position t keeps the block strictly causal; the
``pairing="forward"`` switch instead assigns (t, t + delta) to t, which mixes
future information into position t and is only suitable for
non-autoregressive use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import plucker_embed, plucker_normalize
from .tensor import Tensor

PAIRING_MODES = ("backward", "forward")


@dataclass
class WindowSchedule:
    """Per-layer sets of pairing offsets (each offset a positive integer)."""

    per_layer_offsets: list[list[int]]

    def __post_init__(self):
        cleaned = []
        for offs in self.per_layer_offsets:
            offs = sorted(set(int(d) for d in offs))
            if not offs:
                raise ValueError("each layer needs a non-empty offset set")
            if offs[0] < 1:
                raise ValueError("offsets must be >= 1, got %r" % (offs,))
            cleaned.append(offs)
        self.per_layer_offsets = cleaned

    @classmethod
    def uniform(cls, offsets, layers: int) -> "WindowSchedule":
        return cls([list(offsets) for _ in range(layers)])

    def validate_max_len(self, max_len: int):
        for offs in self.per_layer_offsets:
            if offs[-1] >= max_len:
                raise ValueError("max offset %d must be < max length %d"
                                 % (offs[-1], max_len))

    def __len__(self):
        return len(self.per_layer_offsets)

    def __getitem__(self, i: int) -> list[int]:
        return self.per_layer_offsets[i]


@dataclass
class GrassmannBlockParams:
    reduce_w: Tensor      # [r, d]
    reduce_b: Tensor      # [r]
    plucker_w: Tensor     # [d, C(r,2)]
    plucker_b: Tensor     # [d]
    gate_w: Tensor        # [d, 2d]
    gate_b: Tensor        # [d]
    ffn_w1: Tensor        # [d_ff, d]
    ffn_b1: Tensor        # [d_ff]
    ffn_w2: Tensor        # [d, d_ff]
    ffn_b2: Tensor        # [d]
    norm1_g: Tensor       # [d]
    norm1_b: Tensor       # [d]
    norm2_g: Tensor       # [d]
    norm2_b: Tensor       # [d]
    dropout: float = 0.1
    plucker_eps: float = 1e-6


@dataclass
class AttentionBlockParams:
    q_w: Tensor           # [d, d]
    q_b: Tensor
    k_w: Tensor
    k_b: Tensor
    v_w: Tensor
    v_b: Tensor
    out_w: Tensor         # [d, d]
    out_b: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    norm1_g: Tensor
    norm1_b: Tensor
    norm2_g: Tensor
    norm2_b: Tensor
    heads: int = 4
    dropout: float = 0.1


def reduce_states(h: Tensor, params: GrassmannBlockParams) -> Tensor:
    """[..., L, d] hidden states to [..., L, r] reduced states."""
    return T.linear(h, params.reduce_w, params.reduce_b)


def valid_offsets(t: int, offsets, length: int,
                  pairing: str = "backward") -> list[int]:
    """Offsets usable at 1-based position t of a length-L sequence."""
    if not 1 <= t <= length:
        raise ValueError("position %d outside 1..%d" % (t, length))
    offs = sorted(set(offsets))
    if pairing == "backward":
        return [d for d in offs if t - d >= 1]
    return [d for d in offs if t + d <= length]


def grassmann_features(z: Tensor, offsets, plucker_w: Tensor,
                       plucker_b: Tensor, eps: float = 1e-6,
                       pairing: str = "backward") -> Tensor:
    """Aggregate normalized Pluecker features of offset pairs, per position.

    For each valid offset the pair (earlier, later) of reduced states is
    embedded and normalized; a position averages its normalized vectors and
    the mean is projected to model dimension. Positions with no valid offset
    get an exact zero feature (no bias injected).
    """
    if pairing not in PAIRING_MODES:
        raise ValueError("pairing must be one of %r" % (PAIRING_MODES,))
    length = z.data.shape[-2]
    offs = sorted(set(int(d) for d in offsets))
    counts = np.zeros((length, 1), dtype=z.data.dtype)
    acc = None
    for delta in offs:
        if delta >= length:
            continue
        u = T.narrow(z, -2, 0, length - delta)       # earlier member
        v = T.narrow(z, -2, delta, length - delta)   # later member
        phat = plucker_normalize(plucker_embed(u, v), eps)
        if pairing == "backward":
            padded = T.pad_rows(phat, delta, 0)
            counts[delta:] += 1
        else:
            padded = T.pad_rows(phat, 0, delta)
            counts[:length - delta] += 1
        acc = padded if acc is None else acc + padded
    d_model = plucker_w.data.shape[0]
    if acc is None:
        shape = z.data.shape[:-1] + (d_model,)
        return Tensor(np.zeros(shape, dtype=z.data.dtype))
    mean = acc * (1.0 / np.maximum(counts, 1.0))
    mask = (counts > 0).astype(z.data.dtype)
    # masking after the affine projection keeps empty positions exactly zero
    return T.linear(mean, plucker_w, plucker_b) * mask


def gated_fusion(h: Tensor, g: Tensor, gate_w: Tensor,
                 gate_b: Tensor) -> Tensor:
    """alpha * h + (1 - alpha) * g with alpha = sigmoid(W [h; g] + b)."""
    alpha = T.sigmoid(T.linear(T.concat([h, g], axis=-1), gate_w, gate_b))
    return alpha * h + (1.0 - alpha) * g


def feed_forward(x: Tensor, w1: Tensor, b1: Tensor,
                 w2: Tensor, b2: Tensor) -> Tensor:
    return T.linear(T.gelu(T.linear(x, w1, b1)), w2, b2)


def grassmann_block_forward(h: Tensor, params: GrassmannBlockParams,
                            offsets, training: bool = False,
                            rng=None, pairing: str = "backward") -> Tensor:
    z = reduce_states(h, params)
    g = grassmann_features(z, offsets, params.plucker_w, params.plucker_b,
                           eps=params.plucker_eps, pairing=pairing)
    mixed = gated_fusion(h, g, params.gate_w, params.gate_b)
    mid = T.layer_norm(mixed, params.norm1_g, params.norm1_b)
    mid = T.dropout(mid, params.dropout, training, rng)
    ffn = feed_forward(mid, params.ffn_w1, params.ffn_b1,
                       params.ffn_w2, params.ffn_b2)
    return T.layer_norm(mid + ffn, params.norm2_g, params.norm2_b)


def causal_mask(length: int, dtype=np.float64) -> np.ndarray:
    """Additive pre-softmax mask; large negative above the diagonal."""
    return np.triu(np.full((length, length), -1e9, dtype=dtype), k=1)


def multi_head_attention(h: Tensor, params: AttentionBlockParams,
                         causal: bool = True) -> tuple[Tensor, Tensor]:
    """Returns (mixed states [..., L, d], attention weights [..., heads, L, L])."""
    d = h.data.shape[-1]
    heads = params.heads
    if d % heads != 0:
        raise ValueError("model dim %d not divisible by %d heads" % (d, heads))
    dh = d // heads
    length = h.data.shape[-2]
    lead = h.data.shape[:-2]

    def split_heads(x):
        x = T.reshape(x, lead + (length, heads, dh))
        return T.swapaxes(x, -3, -2)  # [..., heads, L, dh]

    q = split_heads(T.linear(h, params.q_w, params.q_b))
    k = split_heads(T.linear(h, params.k_w, params.k_b))
    v = split_heads(T.linear(h, params.v_w, params.v_b))
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(dh))
    if causal:
        scores = scores + causal_mask(length, dtype=h.data.dtype)
    attn = T.softmax(scores, axis=-1)
    ctx = T.swapaxes(T.matmul(attn, v), -3, -2)
    ctx = T.reshape(ctx, lead + (length, d))
    return T.linear(ctx, params.out_w, params.out_b), attn


def attention_block_forward(h: Tensor, params: AttentionBlockParams,
                            causal: bool = True, training: bool = False,
                            rng=None) -> Tensor:
    mixed, _ = multi_head_attention(h, params, causal=causal)
    mid = T.layer_norm(h + mixed, params.norm1_g, params.norm1_b)
    mid = T.dropout(mid, params.dropout, training, rng)
    ffn = feed_forward(mid, params.ffn_w1, params.ffn_b1,
                       params.ffn_w2, params.ffn_b2)
    return T.layer_norm(mid + ffn, params.norm2_g, params.norm2_b)

"""Language context: a pre-norm transformer encoder over a scene's entity tokens."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import MLP, LayerNorm, Linear, Module, param
from .rng import make_rng
from .semantics import EmbeddingTable
from .tensor import Tensor


class EmptySceneError(ValueError):
    pass


class EncoderLayer(Module):
    def __init__(self, d: int, n_heads: int, ffn_mult: int, seed: int, label: str,
                 residual_gain: float = 1.0):
        if d % n_heads:
            raise ValueError(f"model width {d} not divisible by {n_heads} heads")
        rng = make_rng(seed, label)
        scale = 1.0 / np.sqrt(d)
        self.ln1 = LayerNorm(d)
        self.w_q = param(rng.standard_normal((d, d)) * scale)
        self.w_k = param(rng.standard_normal((d, d)) * scale)
        self.w_v = param(rng.standard_normal((d, d)) * scale)
        self.w_o = param(rng.standard_normal((d, d)) * scale * residual_gain)
        self.ln2 = LayerNorm(d)
        # He init on the output layer would be sqrt(2) too large for a linear map
        self.ffn = MLP([d, ffn_mult * d, d], seed, f"{label}.ffn", last_gain=residual_gain / np.sqrt(2.0))
        self.n_heads = n_heads

    @property
    def d_k(self) -> int:
        return self.w_q.shape[0] // self.n_heads


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def mhsa(x, layer: EncoderLayer, return_attention: bool = False):
    """Multi-head scaled dot-product self-attention over the rows of ``x`` (n, d).

    Heads are column blocks of the W^Q / W^K / W^V projections; their outputs
    are concatenated back in head order and projected by W^O.
    """
    x = T.as_tensor(x)
    n, d = x.shape
    h = layer.n_heads
    q = split_heads(x @ layer.w_q, h)
    k = split_heads(x @ layer.w_k, h)
    v = split_heads(x @ layer.w_v, h)
    scores = T.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(layer.d_k))
    attn = T.softmax(scores, axis=-1)  # (h, n, n)
    heads = T.matmul(attn, v)  # (h, n, d_k)
    out = heads.transpose(1, 0, 2).reshape(n, d) @ layer.w_o
    return (out, attn) if return_attention else out


def encoder_block(x, layer: EncoderLayer, attn_out: list | None = None) -> Tensor:
    y = mhsa(layer.ln1(x), layer, return_attention=attn_out is not None)
    if attn_out is not None:
        y, a = y
        attn_out.append(a.data)
    x = y + x
    return layer.ffn(layer.ln2(x)) + x


class ContextEncoder(Module):
    """Entity label + box tokens -> context-aware d-vectors, one per entity."""

    def __init__(self, n_classes: int, embed_dim: int, d: int, n_layers: int = 2, n_heads: int = 4,
                 ffn_mult: int = 4, seed: int = 0, canonical_order: bool = True):
        self.w_e = EmbeddingTable("entity", n_classes, embed_dim, seed, label="lcm.w_e")
        self.box_proj = Linear(4, embed_dim, seed, "lcm.box_proj")
        self.gamma = Linear(embed_dim, d, seed, "lcm.gamma")
        # residual branches start small so the stream stays near unit scale with depth
        gain = 1.0 / np.sqrt(2.0 * n_layers)
        self.layers = [EncoderLayer(d, n_heads, ffn_mult, seed, f"lcm.layer{i}", residual_gain=gain)
                       for i in range(n_layers)]
        self.canonical_order = canonical_order

    def build_sequence(self, classes, boxes) -> Tensor:
        classes = np.asarray(classes, dtype=np.int64)
        if classes.size == 0:
            raise EmptySceneError("cannot build a context sequence for a scene without entities")
        boxes = T.as_tensor(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
        return self.gamma(self.w_e.lookup(classes) + self.box_proj(boxes))

    def encode(self, x, attn_out: list | None = None) -> Tensor:
        """Run the encoder layers.

        With ``canonical_order`` the tokens are processed sorted by value and
        scattered back, so reordering the input permutes the output bit-exactly
        (floating-point sums over tokens are otherwise order dependent).
        """
        x = T.as_tensor(x)
        if self.canonical_order and x.shape[0] > 1:
            order = np.lexsort(x.data.T[::-1])
            inverse = np.argsort(order)
            h = T.take_rows(x, order)
        else:
            inverse = None
            h = x
        for layer in self.layers:
            h = encoder_block(h, layer, attn_out)
        return T.take_rows(h, inverse) if inverse is not None else h

    def __call__(self, classes, boxes, attn_out: list | None = None) -> Tensor:
        return self.encode(self.build_sequence(classes, boxes), attn_out)


def fuse_entity(visual, context) -> Tensor:
    """Concatenate visual entity features with context vectors along the last axis."""
    return T.concat([T.as_tensor(visual), T.as_tensor(context)], axis=-1)

"""Language attention: label-pair channel gates for relation feature maps."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Conv2d, Module
from .semantics import EmbeddingTable
from .synth import ConfigurationError
from .tensor import DimensionError, Tensor


def semantic_matrix(sub_emb, obj_emb) -> Tensor:
    """Outer product sub ⊗ obj; accepts single vectors or (B, D) batches."""
    sub_emb, obj_emb = T.as_tensor(sub_emb), T.as_tensor(obj_emb)
    if sub_emb.shape != obj_emb.shape:
        raise DimensionError(f"semantic_matrix: embedding shapes {sub_emb.shape} and {obj_emb.shape} differ")
    return T.outer(sub_emb, obj_emb)


class ChannelAttention(Module):
    """Conv stack over the D x D semantic matrix, pooled to one gate per channel.

    The matrix is treated as a one-channel image.  ``inner`` selects the
    activation between convolutions; the output is always a sigmoid.
    """

    def __init__(self, n_channels: int, hidden: int = 16, kernel: int = 3, stride: int = 1,
                 padding: int = 1, n_layers: int = 2, inner: str = "relu", seed: int = 0,
                 label: str = "lam"):
        if inner not in ("relu", "sigmoid"):
            raise ValueError(f"inner activation must be relu or sigmoid, got {inner!r}")
        widths = [1] + [hidden] * (n_layers - 1) + [n_channels]
        self.convs = [
            Conv2d(widths[i], widths[i + 1], kernel, seed, f"{label}.conv{i + 1}",
                   stride=stride, padding=padding)
            for i in range(n_layers)
        ]
        self.inner = inner
        self.n_channels = n_channels

    def __call__(self, x) -> Tensor:
        x = T.as_tensor(x)
        single = x.ndim == 2
        h = x.reshape((1, 1) + x.shape) if single else x.reshape((x.shape[0], 1) + x.shape[1:])
        act = T.relu if self.inner == "relu" else T.sigmoid
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = act(h)
        a = T.sigmoid(T.mean_pool(h))
        return a.reshape(self.n_channels) if single else a


def channel_attention(x, stack: ChannelAttention, expected_channels: int | None = None) -> Tensor:
    if expected_channels is not None and stack.n_channels != expected_channels:
        raise ConfigurationError(
            f"attention stack emits {stack.n_channels} channels, relation feature has {expected_channels}"
        )
    return stack(x)


def refine_relation(e, a) -> Tensor:
    """Channel-wise gating: refined[..., c, :, :] = e[..., c, :, :] * a[..., c]."""
    e, a = T.as_tensor(e), T.as_tensor(a)
    if e.shape[-3] != a.shape[-1]:
        raise DimensionError(f"refine_relation: feature has {e.shape[-3]} channels, attention {a.shape[-1]}")
    return T.mul(e, a.reshape(a.shape + (1, 1)))


class LanguageAttention(Module):
    def __init__(self, n_classes: int, embed_dim: int, n_channels: int, seed: int = 0,
                 hidden: int = 16, kernel: int = 3, stride: int = 1, padding: int = 1,
                 inner: str = "relu", subject_table: EmbeddingTable | None = None,
                 object_table: EmbeddingTable | None = None):
        self.w_s = subject_table or EmbeddingTable("subject", n_classes, embed_dim, seed, label="lam.w_s")
        self.w_o = object_table or EmbeddingTable("object", n_classes, embed_dim, seed, label="lam.w_o")
        self.stack = ChannelAttention(n_channels, hidden, kernel, stride, padding, inner=inner,
                                      seed=seed, label="lam")

    def attention(self, sub_classes, obj_classes) -> Tensor:
        """(P, C) gates; the conv stack runs once per distinct class pair."""
        pairs = np.stack([np.asarray(sub_classes, np.int64), np.asarray(obj_classes, np.int64)], axis=1)
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        x = semantic_matrix(self.w_s.lookup(uniq[:, 0]), self.w_o.lookup(uniq[:, 1]))
        a = self.stack(x)
        return T.take_rows(a, inverse.reshape(-1))

"""Experience estimation: class + position predicate distributions used as a logit offset."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import MLP, Module
from .semantics import EmbeddingTable
from .synth import ConfigurationError
from .tensor import DimensionError, Tensor


def joint_possibility(m_sub_row, m_obj_row) -> np.ndarray:
    """Normalised elementwise product of subject and object marginals.

    Works on (K,) rows or (P, K) stacks.  An all-zero product becomes uniform.
    """
    a = np.asarray(m_sub_row, dtype=np.float64)
    b = np.asarray(m_obj_row, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"joint_possibility: shapes {a.shape} and {b.shape} differ")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginal rows must be nonnegative")
    prod = a * b
    tot = prod.sum(axis=-1, keepdims=True)
    uniform = np.full_like(prod, 1.0 / prod.shape[-1])
    return np.where(tot > 0, prod / np.where(tot > 0, tot, 1.0), uniform)


def distribution_label(p_joint, r, mu: float) -> np.ndarray:
    """mu * p_joint + (1 - mu) * onehot(r); ``r`` may be an int or a (P,) array."""
    if not 0.0 <= mu <= 1.0:
        raise ConfigurationError(f"mu must lie in [0, 1], got {mu}")
    p = np.asarray(p_joint, dtype=np.float64)
    K = p.shape[-1]
    r = np.asarray(r, dtype=np.int64)
    if np.any(r < 0) or np.any(r >= K):
        raise IndexError(f"predicate label outside [0, {K})")
    hot = np.zeros_like(p)
    if p.ndim == 1:
        hot[int(r)] = 1.0
    else:
        hot[np.arange(p.shape[0]), r] = 1.0
    return mu * p + (1.0 - mu) * hot


def eem_loss(d, l) -> Tensor:
    """Mean squared error over the K entries (and over rows, for a batch)."""
    return T.mse(d, l)


def offset_prediction(baseline_logits, d) -> Tensor:
    baseline_logits, d = T.as_tensor(baseline_logits), T.as_tensor(d)
    if baseline_logits.shape != d.shape:
        raise DimensionError(f"offset_prediction: logits {baseline_logits.shape} vs offset {d.shape}")
    return baseline_logits + d


def pair_positions(sub_boxes, obj_boxes) -> np.ndarray:
    """Raw 8-d position vector [x_i, y_i, w_i, h_i, x_j, y_j, w_j, h_j] per pair."""
    return np.concatenate([np.asarray(sub_boxes).reshape(-1, 4), np.asarray(obj_boxes).reshape(-1, 4)], axis=1)


class ExperienceEstimator(Module):
    """Predicate scores from subject/object labels and their boxes.

    Role branches are combined by elementwise product (``fusion='product'``)
    or concatenation, then concatenated with the lifted pair position and
    passed through the two-layer head.
    """

    def __init__(self, n_classes: int, n_predicates: int, embed_dim: int, hidden: int = 64,
                 head_hidden: int = 256, fusion: str = "product", seed: int = 0,
                 subject_table: EmbeddingTable | None = None,
                 object_table: EmbeddingTable | None = None, zero_head: bool = False):
        if fusion not in ("product", "concat"):
            raise ValueError(f"fusion must be 'product' or 'concat', got {fusion!r}")
        self.w_s = subject_table or EmbeddingTable("subject", n_classes, embed_dim, seed, label="eem.w_s")
        self.w_o = object_table or EmbeddingTable("object", n_classes, embed_dim, seed, label="eem.w_o")
        self.phi_s = MLP([embed_dim, hidden, hidden, hidden], seed, "eem.phi_s", final_relu=True)
        self.phi_o = MLP([embed_dim, hidden, hidden, hidden], seed, "eem.phi_o", final_relu=True)
        self.phi_p = MLP([8, hidden, hidden, hidden], seed, "eem.phi_p", final_relu=True)
        width = hidden * (2 if fusion == "product" else 3)
        self.head = MLP([width, head_hidden, n_predicates], seed, "eem.head", zero_last=zero_head)
        self.fusion = fusion

    def __call__(self, sub_classes, obj_classes, sub_boxes, obj_boxes) -> Tensor:
        hs = self.phi_s(self.w_s.lookup(sub_classes))
        ho = self.phi_o(self.w_o.lookup(obj_classes))
        hp = self.phi_p(T.Tensor(pair_positions(sub_boxes, obj_boxes)))
        pair = hs * ho if self.fusion == "product" else T.concat([hs, ho], axis=-1)
        return self.head(T.concat([pair, hp], axis=-1))


def estimate(estimator: ExperienceEstimator, sub_class: int, obj_class: int,
             sub_box, obj_box) -> Tensor:
    return estimator([sub_class], [obj_class], sub_box, obj_box).reshape(-1)

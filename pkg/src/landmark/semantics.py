"""Role-specific label embeddings (subject / object / entity)."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Module, param
from .rng import make_rng
from .synth import VocabularyError
from .tensor import Tensor

ROLES = ("subject", "object", "entity")
SCHEMES = ("seeded-gaussian", "identity-pad")


def init_weights(n_classes: int, dim: int, seed: int, scheme: str = "seeded-gaussian",
                 label: str = "embedding") -> np.ndarray:
    if scheme == "seeded-gaussian":
        return make_rng(seed, label).standard_normal((n_classes, dim)) / np.sqrt(dim)
    if scheme == "identity-pad":
        if n_classes > dim:
            raise ValueError(f"identity-pad needs E <= D, got E={n_classes}, D={dim}")
        return np.eye(n_classes, dim)
    raise ValueError(f"unknown embedding scheme {scheme!r}; expected one of {SCHEMES}")


class EmbeddingTable(Module):
    """A trainable E x D label-to-vector projection for one role."""

    def __init__(self, role: str, n_classes: int, dim: int, seed: int = 0,
                 scheme: str = "seeded-gaussian", label: str | None = None):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        self.role = role
        self.weights = param(init_weights(n_classes, dim, seed, scheme, label or f"embed.{role}"))

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def _check(self, idx: np.ndarray) -> None:
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_classes):
            raise VocabularyError(f"class index outside [0, {self.n_classes}): {idx.tolist()}")

    def extract(self, class_index: int) -> Tensor:
        idx = np.asarray([class_index], dtype=np.int64)
        self._check(idx)
        return T.take_rows(self.weights, idx).reshape(self.dim)

    def lookup(self, classes) -> Tensor:
        """Batched extract: (n,) class indices -> (n, D)."""
        idx = np.asarray(classes, dtype=np.int64).reshape(-1)
        self._check(idx)
        return T.take_rows(self.weights, idx)

    def project(self, c) -> Tensor:
        """Relaxed form w^T c for a real-valued (possibly non one-hot) class vector."""
        return T.matmul(T.as_tensor(c).reshape(1, -1), self.weights).reshape(self.dim)


def init_embeddings(role: str, n_classes: int, dim: int, seed: int,
                    scheme: str = "seeded-gaussian") -> EmbeddingTable:
    return EmbeddingTable(role, n_classes, dim, seed=seed, scheme=scheme)


def extract(table: EmbeddingTable, class_index: int) -> Tensor:
    return table.extract(class_index)

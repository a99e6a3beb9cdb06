"""Similarity measures and the InfoNCE objective over predicted queries and keys."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .errors import ConfigurationError, DivergenceError

KINDS = ("dot", "bilinear")


class SimilarityKind:
    """``dot``: q.k ; ``bilinear``: q^T W k with W learnable (starts at identity)."""

    def __init__(self, variant: str = "bilinear", dim: int = 50, dtype=np.float64):
        if variant not in KINDS:
            raise ConfigurationError(f"unknown similarity {variant!r}; choose from {KINDS}")
        self.variant = variant
        self.dim = dim
        self.params = ParameterSet(dtype)
        if variant == "bilinear":
            self.params.add("W", np.eye(dim))

    def logits(self, queries: Tensor, keys) -> Tensor:
        """All-pairs similarity matrix, entry (i, j) = sim(query_i, key_j)."""
        keys_t = Tensor(np.ascontiguousarray(_values(keys).T))
        if queries.shape[-1] != keys_t.shape[0]:
            raise ConfigurationError("query and key dimensions differ")
        if self.variant == "bilinear":
            return ad.matmul(ad.matmul(queries, self.params["W"]), keys_t)
        return ad.matmul(queries, keys_t)


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def similarity(q, k, kind: SimilarityKind) -> Tensor:
    """Scalar similarity of two latent vectors; differentiable in q, k and W."""
    q = q if isinstance(q, Tensor) else Tensor(np.asarray(q, dtype=kind.params.dtype))
    k = k if isinstance(k, Tensor) else Tensor(np.asarray(k, dtype=kind.params.dtype))
    if q.shape != k.shape or q.ndim != 1:
        raise ConfigurationError(f"similarity needs two vectors of equal length, got {q.shape} and {k.shape}")
    if kind.variant == "bilinear":
        q = ad.reshape(ad.matmul(ad.reshape(q, (1, -1)), kind.params["W"]), (-1,))
    return ad.tsum(ad.mul(q, k))


def info_nce_from_logits(logits: Tensor) -> Tensor:
    """Mean over rows of -log softmax(row)[i]; the positive of row i is column i."""
    if not np.all(np.isfinite(logits.data)):
        raise DivergenceError("non-finite similarity in contrastive logits")
    return ad.neg(ad.mean(ad.diagonal(ad.log_softmax(logits, axis=1))))


def info_nce_loss(queries: Tensor, keys, kind: SimilarityKind) -> Tensor:
    """InfoNCE over a batch of K predicted queries and K keys (keys carry no gradient).

    Negatives for query i are the other K - 1 keys of the batch.
    """
    if queries.ndim != 2 or queries.shape[0] < 1:
        raise ConfigurationError("info_nce_loss needs a (K, d) query batch with K >= 1")
    keys = _values(keys)
    if keys.shape != queries.shape:
        raise ConfigurationError(f"queries {queries.shape} and keys {keys.shape} must match")
    return info_nce_from_logits(kind.logits(queries, keys))

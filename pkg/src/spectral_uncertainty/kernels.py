"""Kernels on unit-norm sentence embeddings and their Gram matrices.

Embeddings are plain float64 numpy arrays: a single embedding has shape
``(d,)`` and a sample of them shape ``(n, d)``. Inputs are re-normalized to
unit length on ingestion so that every kernel here satisfies ``k(x, x) = 1``.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import UsageError

logger = logging.getLogger(__name__)

NORM_WARN_TOL = 1e-3


class KernelFamily(str, enum.Enum):
    RBF = "rbf"
    LINEAR = "linear"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus the RBF scale ``gamma`` (ignored for linear)."""

    family: KernelFamily = KernelFamily.RBF
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.family is KernelFamily.RBF:
            if not np.isfinite(self.gamma) or self.gamma <= 0:
                raise UsageError(f"RBF gamma must be a positive finite number, got {self.gamma!r}")

    @classmethod
    def rbf(cls, gamma: float = 1.0) -> "KernelSpec":
        return cls(KernelFamily.RBF, gamma)

    @classmethod
    def linear(cls) -> "KernelSpec":
        return cls(KernelFamily.LINEAR, 1.0)

    def to_dict(self) -> dict:
        return {"family": self.family.value, "gamma": float(self.gamma)}


def as_embeddings(samples: Sequence[Sequence[float]] | np.ndarray, *, warn: bool = True) -> np.ndarray:
    """Validate a sample of embeddings and return it as unit rows, shape ``(n, d)``.

    Rows whose norm deviates from 1 by more than ``NORM_WARN_TOL`` are still
    accepted (providers differ in whether they pre-normalize) but logged.
    """
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise UsageError(f"expected an (n, d) array of embeddings, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise UsageError("at least one embedding is required")
    if arr.shape[1] == 0:
        raise UsageError("embeddings must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise UsageError("embeddings contain non-finite values")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms == 0):
        raise UsageError("zero vector cannot be normalized to an embedding")
    if warn and np.any(np.abs(norms - 1.0) > NORM_WARN_TOL):
        logger.warning(
            "re-normalizing %d embedding(s) with norm off by more than %g",
            int(np.sum(np.abs(norms - 1.0) > NORM_WARN_TOL)),
            NORM_WARN_TOL,
        )
    return arr / norms[:, None]


def kernel_value(x, y, spec: KernelSpec) -> float:
    """Evaluate ``k(x, y)``: ``exp(-gamma * ||x - y||^2)`` or ``<x, y>``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise UsageError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise UsageError("non-finite embedding")
    x, y = as_embeddings(np.stack([x, y]))
    if spec.family is KernelFamily.LINEAR:
        return float(np.clip(x @ y, -1.0, 1.0))
    diff = x - y
    return float(np.exp(-spec.gamma * (diff @ diff)))


def squared_distances(X: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances of unit rows, exact zeros on the diagonal."""
    G = X @ X.T
    sq = np.diag(G)
    D = sq[:, None] + sq[None, :] - 2.0 * G
    D = 0.5 * (D + D.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def gram_from_unit_rows(X: np.ndarray, spec: KernelSpec) -> np.ndarray:
    """Gram matrix for rows already validated by :func:`as_embeddings`."""
    if spec.family is KernelFamily.LINEAR:
        K = X @ X.T
        K = 0.5 * (K + K.T)
        np.clip(K, -1.0, 1.0, out=K)
    else:
        K = np.exp(-spec.gamma * squared_distances(X))
    np.fill_diagonal(K, 1.0)
    return K


def gram_matrix(samples, spec: KernelSpec) -> np.ndarray:
    """Dense symmetric ``n x n`` matrix ``K[i, j] = k(x_i, x_j)`` with unit diagonal."""
    X = as_embeddings(samples)
    return gram_from_unit_rows(X, spec)


def check_gram(K: np.ndarray, *, sym_tol: float = 1e-12, diag_tol: float = 1e-9) -> None:
    """Raise :class:`UsageError` if ``K`` is not square, symmetric and unit-diagonal."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
        raise UsageError(f"Gram matrix must be square and non-empty, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise UsageError("Gram matrix contains non-finite entries")
    if np.max(np.abs(K - K.T)) > sym_tol:
        raise UsageError("Gram matrix is not symmetric")
    if np.max(np.abs(np.diag(K) - 1.0)) > diag_tol:
        raise UsageError("Gram matrix diagonal must be 1 (normalized kernel)")


def pairwise_distances(samples) -> np.ndarray:
    """Condensed vector of the ``n(n-1)/2`` pairwise L2 distances."""
    X = as_embeddings(samples)
    if X.shape[0] < 2:
        raise UsageError("pairwise distances need at least 2 embeddings")
    return pdist(X, metric="euclidean")


def distance_counts(distances: np.ndarray, grid: Iterable[float]) -> np.ndarray:
    """Number of distances ``<= t`` for each grid point ``t``."""
    d = np.sort(np.asarray(distances, dtype=np.float64))
    g = np.asarray(list(grid), dtype=np.float64)
    return np.searchsorted(d, g, side="right")


def pairwise_distance_cdf(samples, grid: Iterable[float]) -> list[tuple[float, float]]:
    """Empirical CDF of pairwise L2 distances evaluated on ``grid``.

    Used to pick the RBF scale: a compact embedding space (most distances
    small) calls for a larger ``gamma``.
    """
    d = pairwise_distances(samples)
    g = [float(t) for t in grid]
    counts = distance_counts(d, g)
    return [(t, float(c) / d.size) for t, c in zip(g, counts)]

"""Von Neumann entropy estimators and the spectral uncertainty decomposition.

All quantities are in nats. For a sample ``x_1..x_n`` the plug-in VNE of the
empirical covariance operator equals the Shannon entropy of the eigenvalues of
``K / n`` (K the Gram matrix), so nothing infinite-dimensional is ever formed.

For a two-stage sample (``n`` clarifications, ``m`` answers each):

* epistemic = mean over groups of the VNE of each ``K_i / m``
* total     = VNE of the pooled ``K_out / (n m)``
* aleatoric = total - epistemic   (the Holevo information estimate)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NotPSDError, UsageError
from .kernels import KernelSpec, as_embeddings, check_gram, gram_from_unit_rows

CLIP_ZERO = 1e-12
NEG_TOL = 1e-8


@dataclass(frozen=True)
class Spectrum:
    """Clipped eigenvalues of a unit-trace kernel matrix ``K / n``."""

    eigenvalues: np.ndarray
    source_size: int

    @property
    def trace_residual(self) -> float:
        """``sum(eigenvalues) - 1``; kept for diagnostics, never corrected."""
        return float(np.sum(self.eigenvalues) - 1.0)

    def nonzero(self, tol: float = CLIP_ZERO) -> np.ndarray:
        return np.sort(self.eigenvalues[self.eigenvalues > tol])[::-1]

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in np.sort(self.eigenvalues)[::-1]],
            "source_size": self.source_size,
            "trace_residual": self.trace_residual,
        }


def _clip(eigenvalues: np.ndarray, size: int) -> np.ndarray:
    lam = np.array(eigenvalues, dtype=np.float64)
    lo = float(lam.min())
    if lo <= -NEG_TOL:
        raise NotPSDError(lo, size)
    lam[lam < CLIP_ZERO] = 0.0
    return lam


def spectrum_of(K: np.ndarray, *, validate: bool = True) -> Spectrum:
    """Eigenvalues of ``K / n`` from a symmetric eigensolver.

    Values in ``(-1e-8, 1e-12)`` are round-off and set to zero; anything at or
    below ``-1e-8`` means the kernel is broken and raises :class:`NotPSDError`.
    The spectrum is not renormalized.
    """
    K = np.asarray(K, dtype=np.float64)
    if validate:
        check_gram(K)
    n = K.shape[0]
    lam = np.linalg.eigvalsh(K / n)
    return Spectrum(_clip(lam, n), n)


def entropy_term(eigenvalues: np.ndarray) -> float:
    """``sum(lam * log(lam))`` over strictly positive entries (``0 log 0 = 0``)."""
    lam = np.asarray(eigenvalues, dtype=np.float64)
    pos = lam[lam > 0]
    return float(np.sum(pos * np.log(pos)))


def vne(s: Spectrum) -> float:
    """Von Neumann entropy ``-sum(lam log lam)`` of a spectrum."""
    return -entropy_term(s.eigenvalues)


def vne_of_samples(samples, spec: KernelSpec) -> float:
    """Plug-in VNE of one sample of embeddings.

    Applied to answers drawn from the unclarified question this is the
    predictive kernel entropy baseline.
    """
    X = as_embeddings(samples)
    return vne(spectrum_of(gram_from_unit_rows(X, spec), validate=False))


class SampleMatrix:
    """Two-stage sample of embeddings with shape ``(n, m, d)``.

    Group ``i`` holds the ``m`` answer embeddings sampled under clarification
    ``i``. Every group must have the same size.
    """

    def __init__(self, groups):
        if isinstance(groups, np.ndarray):
            arr = np.asarray(groups, dtype=np.float64)
        else:
            groups = list(groups)
            if not groups:
                raise UsageError("a SampleMatrix needs at least one group")
            sizes = {len(g) for g in groups}
            if len(sizes) != 1:
                raise UsageError(f"all groups must have the same number of answers, got sizes {sorted(sizes)}")
            arr = np.asarray([np.asarray(g, dtype=np.float64) for g in groups])
        if arr.ndim != 3:
            raise UsageError(f"expected (n, m, d) embeddings, got shape {arr.shape}")
        n, m, d = arr.shape
        if n < 1 or m < 1:
            raise UsageError("a SampleMatrix needs n >= 1 groups of m >= 1 answers")
        flat = as_embeddings(arr.reshape(n * m, d))
        self._flat = flat
        self.n, self.m, self.d = n, m, d

    @property
    def flat(self) -> np.ndarray:
        """Row-major pooled sample: row ``i * m + j`` is answer ``j`` of group ``i``."""
        return self._flat

    @property
    def groups(self) -> np.ndarray:
        return self._flat.reshape(self.n, self.m, self.d)

    def group(self, i: int) -> np.ndarray:
        return self._flat[i * self.m : (i + 1) * self.m]


@dataclass(frozen=True)
class UncertaintyReport:
    total: float
    aleatoric: float
    epistemic: float
    inner_spectra: list[Spectrum] = field(repr=False)
    outer_spectrum: Spectrum = field(repr=False)

    def as_tuple(self) -> tuple[float, float, float]:
        return self.total, self.aleatoric, self.epistemic

    def to_dict(self, *, spectra: bool = True) -> dict:
        out = {"total": self.total, "aleatoric": self.aleatoric, "epistemic": self.epistemic}
        if spectra:
            out["outer_spectrum"] = self.outer_spectrum.to_dict()
            out["inner_spectra"] = [s.to_dict() for s in self.inner_spectra]
        return out


def decompose(Y: SampleMatrix | Sequence | np.ndarray, spec: KernelSpec) -> UncertaintyReport:
    """Split the total VNE of a two-stage sample into aleatoric and epistemic parts.

    The inner Gram matrices are the diagonal blocks of the pooled one, so each
    kernel value is evaluated once. Reductions run in group order, which keeps
    the result independent of how the caller parallelizes anything upstream.
    """
    if not isinstance(Y, SampleMatrix):
        Y = SampleMatrix(Y)
    n, m = Y.n, Y.m
    K_out = gram_from_unit_rows(Y.flat, spec)

    inner: list[Spectrum] = []
    inner_sum = 0.0
    for i in range(n):
        block = K_out[i * m : (i + 1) * m, i * m : (i + 1) * m]
        s = spectrum_of(block, validate=False)
        inner.append(s)
        inner_sum += entropy_term(s.eigenvalues)
    outer = spectrum_of(K_out, validate=False)

    epistemic = -inner_sum / n
    aleatoric = inner_sum / n - entropy_term(outer.eigenvalues)
    total = aleatoric + epistemic
    return UncertaintyReport(total, aleatoric, epistemic, inner, outer)


def covariance_oracle(samples) -> Spectrum:
    """Eigenvalues of the explicit ``d x d`` covariance ``(1/n) sum x x^T``.

    Only meaningful for the linear kernel, whose feature map is the identity.
    Its nonzero eigenvalues must coincide with those of :func:`spectrum_of`
    applied to the linear Gram matrix of the same sample.
    """
    X = as_embeddings(samples)
    n = X.shape[0]
    C = (X.T @ X) / n
    C = 0.5 * (C + C.T)
    lam = np.linalg.eigvalsh(C)
    return Spectrum(_clip(lam, C.shape[0]), n)

"""Spectral uncertainty decomposition for LLM answers.

Total predictive uncertainty over answer embeddings is measured with the von
Neumann entropy of a kernel Gram matrix and split into an aleatoric part
(disagreement across clarifications of the input) and an epistemic part
(spread of answers within each clarification).
"""

from __future__ import annotations

from .errors import (
    ConfigError,
    DatasetError,
    JudgeParseError,
    NotPSDError,
    ParseError,
    PermanentProviderError,
    ProviderError,
    ProviderTransportError,
    SpectralUQError,
    UndefinedMetricError,
    UsageError,
)
from .kernels import KernelFamily, KernelSpec, gram_matrix
from .spectral import SampleMatrix, Spectrum, UncertaintyReport, decompose, spectrum_of, vne, vne_of_samples
from .config import RunConfig, load_config
from .pipeline import QuestionRun, run_benchmark, run_question

__all__ = [
    "ConfigError", "DatasetError", "JudgeParseError", "NotPSDError", "ParseError", "PermanentProviderError",
    "ProviderError", "ProviderTransportError", "SpectralUQError", "UndefinedMetricError", "UsageError",
    "KernelFamily", "KernelSpec", "gram_matrix",
    "SampleMatrix", "Spectrum", "UncertaintyReport", "decompose", "spectrum_of", "vne", "vne_of_samples",
    "RunConfig", "load_config", "QuestionRun", "run_benchmark", "run_question",
]

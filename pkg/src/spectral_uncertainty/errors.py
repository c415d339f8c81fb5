"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SpectralUQError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(SpectralUQError, ValueError):
    """Invalid arguments: shape mismatch, empty input, non-finite values."""


class NotPSDError(SpectralUQError, ArithmeticError):
    """A kernel matrix has an eigenvalue clearly below zero."""

    def __init__(self, min_eigenvalue: float, size: int):
        self.min_eigenvalue = min_eigenvalue
        self.size = size
        super().__init__(
            f"matrix not PSD: smallest eigenvalue {min_eigenvalue:.3e} "
            f"of a {size}x{size} normalized kernel matrix"
        )


class ProviderError(SpectralUQError):
    """Base class for failures talking to a model provider."""


class PermanentProviderError(ProviderError):
    """The provider rejected the request (4xx other than 429); never retried."""

    def __init__(self, status_code: int, body: str):
        self.status_code = status_code
        self.body = body
        super().__init__(f"provider returned HTTP {status_code}: {body[:300]}")


class ProviderTransportError(ProviderError):
    """Retries exhausted on 5xx, 429 or network timeouts."""


class ParseError(SpectralUQError, ValueError):
    """Model output did not follow the expected format."""

    def __init__(self, message: str, raw_text: str = ""):
        self.raw_text = raw_text
        super().__init__(message)


class JudgeParseError(ParseError):
    """Correctness judge answered something other than yes/no."""


class UndefinedMetricError(SpectralUQError, ValueError):
    """Metric needs both classes (AUROC) or at least one positive (AUPR)."""


class DatasetError(SpectralUQError, ValueError):
    """Malformed dataset file."""


class ConfigError(SpectralUQError, ValueError):
    """One or more configuration fields are invalid."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))

"""Experimental unit information index (EUII) for fixed and adaptive designs."""

from .errors import (
    ConvergenceError,
    DataInsufficiencyError,
    DegenerateEvidenceError,
    DomainError,
    EuiiError,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DataInsufficiencyError",
    "DegenerateEvidenceError",
    "DomainError",
    "EuiiError",
    "__version__",
]

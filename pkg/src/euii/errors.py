"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage problems exit with 2,
data problems with 3 and numerical failures with 4.
"""


class EuiiError(Exception):
    """Base class for all package errors."""


class DomainError(EuiiError, ValueError):
    """An argument lies outside the domain of the function."""


class DegenerateEvidenceError(DomainError):
    """Power of exactly 0 or 1 makes a likelihood ratio infinite or zero."""


class ConvergenceError(EuiiError, ArithmeticError):
    """A series or root search did not converge."""


class DataInsufficiencyError(EuiiError):
    """An outcome cell is empty but carries nonzero posterior weight."""

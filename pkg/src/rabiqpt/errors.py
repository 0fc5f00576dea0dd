"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`ConfigError` -> 2,
:class:`NumericalError` -> 3, :class:`DataFormatError` -> 4.
"""


class RabiQptError(Exception):
    """Base class for all package errors."""


class ConfigError(RabiQptError, ValueError):
    """Invalid parameters or configuration."""


class DataFormatError(RabiQptError, ValueError):
    """Malformed input file (signal CSV, config JSON)."""


class NumericalError(RabiQptError, RuntimeError):
    """A numerical procedure failed."""


class CutoffError(NumericalError):
    """Fock truncation still inadequate after all retries."""


class PositivityError(NumericalError):
    """Density matrix lost positivity beyond tolerance."""


class RankDeficiencyError(NumericalError):
    """Normal equations of a fit are singular."""


class ConvergenceError(NumericalError):
    """Iterative solver did not converge."""


class ThresholdUnreachableError(NumericalError):
    """No cutoff in the scanned range reaches the occupation threshold.

    ``best`` holds the candidate fit with the largest total occupation.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best

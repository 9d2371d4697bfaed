"""Exception types shared across the package.

The CLI maps ``ConfigError`` to exit code 1 and every ``NumericalError``
subclass to exit code 2.
"""


class DarkArrayError(Exception):
    """Base class."""


class ConfigError(DarkArrayError, ValueError):
    """Invalid user input (config file, lattice parameters, CLI flags)."""


class NumericalError(DarkArrayError, RuntimeError):
    """A computation could not be carried out reliably."""


class DomainError(NumericalError, ValueError):
    """Argument outside the mathematical domain (e.g. zero displacement)."""


class RegimeError(NumericalError, ValueError):
    """Parameters outside the validity regime of an approximation."""


class LightConeError(DomainError):
    """Quasi-momentum too close to the light cone |k| = k_e."""


class ConvergenceError(NumericalError):
    """Iterative solver failed; ``best_residuals`` holds what it reached."""

    def __init__(self, message, best_residuals=None):
        super().__init__(message)
        self.best_residuals = best_residuals

"""
The :mod:`moca.exceptions` module includes all custom warnings and error
classes used across the package.
"""

__all__ = ['ContractViolation', 'DegenerateBeliefError', 'NumericalError',
           'ConfigError']


class ContractViolation(ValueError):
    """Raised when an operation is called outside of its preconditions.

    Shape mismatches, non-scalar losses, out-of-range labels, unnormalized
    soft beliefs and invalid hazard rates or horizons all end up here.
    """


class DegenerateBeliefError(FloatingPointError):
    """Raised when a run-length belief can no longer be normalized."""


class NumericalError(ArithmeticError):
    """Raised on a numerical failure that must not be silently absorbed.

    Parameters
    ----------
    message : str
    iteration : int or None
        Training iteration at which the failure happened, if any.
    seed : int or None
        Seed of the stream being processed, if any.
    """

    def __init__(self, message, iteration=None, seed=None):
        super().__init__(message)
        self.iteration = iteration
        self.seed = seed


class ConfigError(ValueError):
    """Raised when an experiment configuration cannot be parsed or
    validated. The message names the offending section and field."""

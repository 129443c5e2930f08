"""Exception types shared across the engine.

The CLI maps these onto process exit codes: data validation failures
exit 3, numerical failures exit 4, and plain OSError exits 5.
"""


class CrossviewError(Exception):
    """Base class for all engine errors."""


class DataValidationError(CrossviewError):
    """Malformed input: bad file format, broken invariant, mismatched shapes."""


class NumericalError(CrossviewError):
    """Numerical failure: non-convergent solver, unnormalizable zero vector."""

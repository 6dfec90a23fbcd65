"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: validation problems exit with 2,
failed numerical self-checks exit with 3.
"""


class LatentPruneError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(LatentPruneError, ValueError):
    """Malformed input: bad dimensions, bad configuration, bad file."""


class NumericalCheckError(LatentPruneError, RuntimeError):
    """A requested numerical self-check did not hold within tolerance."""

"""Exception types shared across the pipeline.

Validation problems (bad input files, index mismatches, out-of-range
arguments) and numerical failures (factorization breakdown, diverging
chains) are kept distinct so the CLI can map them to different exit codes.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented precondition."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular factorization, divergence)."""

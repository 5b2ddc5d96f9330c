"""Exception types shared across the package.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class InputError(ValueError):
    """Malformed, inconsistent or out-of-contract input."""


class NumericalError(ArithmeticError):
    """A numerical procedure could not produce a trustworthy result."""

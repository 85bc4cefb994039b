"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes, so attack/embed internals raise these
instead of bare ValueError/RuntimeError.
"""


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class ParameterError(ValueError):
    """A parameter is outside its validity domain."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class RemoteError(RuntimeError):
    """A remote feature extractor failed (connection, protocol, or shapes)."""

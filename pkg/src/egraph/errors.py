"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: parameter/config problems exit 1,
data/format/shape problems exit 2, numeric failures exit 3.
"""


class EGraphError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(EGraphError):
    """A caller-supplied parameter is out of its documented range."""


class ConfigError(ParameterError):
    """A run-configuration field is invalid; the message names the field."""


class DataError(EGraphError):
    """Input data violates a contract (unknown label, missing class, ...)."""


class FormatError(DataError):
    """A file could not be parsed; the message carries a line number."""


class DimensionError(EGraphError):
    """Operand shapes are incompatible."""


class ContractError(EGraphError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class StateError(EGraphError):
    """An object is not in the state an operation requires."""


class NumericError(EGraphError):
    """A computation produced non-finite values or hit a numeric domain edge."""


class DegenerateVectorError(NumericError):
    """A zero-norm row reached an operation that needs a direction."""


class GraphError(EGraphError):
    """A graph violates a structural precondition (e.g. non-positive degree)."""

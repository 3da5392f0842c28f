"""Exception hierarchy shared across the package."""


class PaxError(Exception):
    """Base class for all errors raised by paxboost."""


class DimensionError(PaxError, ValueError):
    pass


class LabelError(PaxError, ValueError):
    pass


class DegenerateLeafError(PaxError, ArithmeticError):
    pass


class StructuralError(PaxError, ValueError):
    pass


class EmptySketchError(PaxError, ValueError):
    pass


class SketchInputError(PaxError, ValueError):
    pass


class ProtocolError(PaxError, RuntimeError):
    pass


class ConfigurationError(PaxError, ValueError):
    pass


class IngestionError(PaxError, ValueError):
    """CSV parse failure; carries the offending row/column when known."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class SamplingError(PaxError, ValueError):
    pass


class PartitionError(PaxError, ValueError):
    pass


class UndefinedMetricError(PaxError, ValueError):
    pass

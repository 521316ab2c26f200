"""Exception types shared across the package."""


class TimeMKGError(Exception):
    """Base class for all package errors."""

    module = "timemkg"

    def to_dict(self):
        return {"error": type(self).__name__, "module": self.module, "message": str(self)}


class ShapeMismatch(TimeMKGError, ValueError):
    module = "numkernel"


class UnknownNode(TimeMKGError, KeyError):
    module = "kgstore"

    def __str__(self):
        return Exception.__str__(self)


class BadTemplate(TimeMKGError, ValueError):
    module = "kgstore"


class ParseError(TimeMKGError, ValueError):
    module = "kgstore"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StaleCache(TimeMKGError):
    module = "promptembed"

    def __init__(self, message, variables=()):
        self.variables = list(variables)
        super().__init__(message)


class ServiceError(TimeMKGError):
    module = "promptembed"


class ConfigError(TimeMKGError, ValueError):
    module = "config"


class UnknownVariant(TimeMKGError, ValueError):
    module = "fusion"


class TooShort(TimeMKGError, ValueError):
    module = "training"


class DivergenceError(TimeMKGError, FloatingPointError):
    module = "training"


class BadSpec(TimeMKGError, ValueError):
    module = "training"


class EmptySet(TimeMKGError, ValueError):
    module = "training"


class DegenerateVariable(UserWarning):
    """Emitted when a column has zero variance in the training split."""

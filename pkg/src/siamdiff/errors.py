"""Exception hierarchy shared across the package."""


class SiamDiffError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(SiamDiffError, ValueError):
    pass


class ShapeError(SiamDiffError, ValueError):
    pass


class ParseError(SiamDiffError, ValueError):
    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EmptyInputError(SiamDiffError, ValueError):
    pass


class StructuralError(SiamDiffError, ValueError):
    pass


class GeometryError(SiamDiffError, ValueError):
    pass


class ConsistencyError(SiamDiffError, ValueError):
    pass


class ClashError(SiamDiffError, RuntimeError):
    def __init__(self, message, pair=None, distance=None):
        self.pair = pair
        self.distance = distance
        super().__init__(message)


class ConfigError(SiamDiffError, ValueError):
    pass


class UsageError(SiamDiffError, RuntimeError):
    pass


class DivergenceError(SiamDiffError, FloatingPointError):
    def __init__(self, message, dump_path=None):
        self.dump_path = dump_path
        super().__init__(message)


class IntegrityError(SiamDiffError, IOError):
    pass


class UndefinedCorrelationError(SiamDiffError, ValueError):
    pass

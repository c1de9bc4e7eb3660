"""Exception hierarchy shared across the package."""


class CadflError(Exception):
    pass


class ShapeError(CadflError, ValueError):
    pass


class NumericError(CadflError, ArithmeticError):
    pass


class ConfigError(CadflError, ValueError):
    pass


class ProtocolError(CadflError):
    pass


class CorruptionError(CadflError, ValueError):
    """A compressed layer references a centroid that does not exist."""


class DecodeError(CadflError, ValueError):
    pass


class BadMagicError(DecodeError):
    pass


class BadVersionError(DecodeError):
    pass


class TruncatedStreamError(DecodeError):
    pass


class IndexOverflowError(DecodeError):
    pass

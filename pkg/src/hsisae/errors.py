"""Exception hierarchy shared by every hsisae module."""


class HsiSaeError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HsiSaeError, ValueError):
    """Operands have incompatible shapes."""


class ContractError(HsiSaeError, ValueError):
    """An argument violates a documented precondition."""


class DataError(HsiSaeError):
    """Input data could not be read or is inconsistent."""


class MissingFileError(DataError, FileNotFoundError):
    """A required input file does not exist."""


class HeaderError(DataError):
    """A file header is malformed or declares unsupported values."""


class SizeMismatchError(DataError):
    """A payload does not hold the number of values its header declares."""


class ConfigError(HsiSaeError, ValueError):
    """An experiment configuration is invalid or incomplete."""


class DivergenceError(HsiSaeError, ArithmeticError):
    """Training produced a non-finite cost."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch

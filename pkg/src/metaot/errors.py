"""Exception types raised across the package."""


class MetaOTError(Exception):
    """Base class for every error raised by metaot."""


class InvalidWeights(MetaOTError, ValueError):
    pass


class DimensionError(MetaOTError, ValueError):
    pass


class NotOnSphere(MetaOTError, ValueError):
    pass


class InvalidEpsilon(MetaOTError, ValueError):
    pass


class InvalidParameter(MetaOTError, ValueError):
    pass


class NumericalOverflow(MetaOTError, ArithmeticError):
    pass


class NonFiniteGradient(MetaOTError, ArithmeticError):
    def __init__(self, msg, iteration=None):
        super().__init__(msg if iteration is None else f"{msg} (iteration {iteration})")
        self.iteration = iteration


class FormatError(MetaOTError, ValueError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ConfigError(MetaOTError, ValueError):
    pass

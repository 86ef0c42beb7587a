"""Exception classes. Each error carries the CLI exit code it maps to."""


class HCGError(Exception):
    exit_code = 1


class ConfigError(HCGError, ValueError):
    """Invalid parameters or experiment configuration."""
    exit_code = 2


class DomainError(ConfigError):
    pass


class SupportError(ConfigError):
    pass


class HypothesisError(ConfigError):
    pass


class WindowError(ConfigError):
    pass


class LevelError(ConfigError):
    pass


class InsufficientDataError(ConfigError):
    pass


class BracketError(ConfigError):
    pass


class ResourceError(HCGError):
    exit_code = 3


class CacheVersionError(ResourceError):
    pass


class NumericError(HCGError, ArithmeticError):
    exit_code = 4


class DegenerateInputError(NumericError, ValueError):
    """Coincident points (the hierarchical distance is undefined)."""


class DepthError(NumericError):
    pass


class OverflowGuardError(NumericError, OverflowError):
    pass


class ValidationFailure(HCGError):
    exit_code = 5

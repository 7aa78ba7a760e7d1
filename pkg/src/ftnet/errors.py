"""Exception types shared across the package."""


class FTNetError(Exception):
    """Base class for all library errors."""


class ShapeError(FTNetError, ValueError):
    """Operands have non-conforming shapes."""


class ModeError(FTNetError, ValueError):
    """A mode index is outside ``1..order``."""


class CapacityError(FTNetError, OverflowError):
    """A result would be too large to allocate."""


class StateError(FTNetError, RuntimeError):
    """A cache or optimizer state does not belong to the object it is used with."""


class FormatError(FTNetError, ValueError):
    """A file does not follow the expected binary or text layout."""


class ConfigError(FTNetError, ValueError):
    """An experiment configuration is malformed or inconsistent."""


class LengthError(FormatError):
    """A file is shorter (or longer) than its header promises."""

"""Exception hierarchy shared across the package."""


class TanetError(Exception):
    pass


class ShapeError(TanetError, ValueError):
    """Operand shapes or ranks are incompatible."""


class CacheError(TanetError, ValueError):
    """A backward pass received a cache that does not belong to it."""


class ConfigError(TanetError, ValueError):
    pass


class FormatError(TanetError):
    """A file does not carry the expected magic or structure."""


class VersionError(FormatError):
    pass


class LengthError(FormatError):
    """File length disagrees with its header (truncation or trailing bytes)."""


class ConfigMismatchError(TanetError, ValueError):
    pass


class ManifestError(TanetError):
    pass


class DegenerateChannelError(TanetError, ValueError):
    pass


class EmptyInputError(TanetError, ValueError):
    pass

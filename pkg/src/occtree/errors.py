"""Exception hierarchy shared by every module."""


class OcctreeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(OcctreeError, ValueError):
    """Grid dimensions are incompatible with the requested operation."""


class ConfigError(OcctreeError, ValueError):
    """A configuration value is out of its allowed range."""


class LevelError(OcctreeError, ValueError):
    """An octree level argument is invalid."""


class StructureError(OcctreeError, ValueError):
    """An octree structure or leaf set violates its invariants."""


class ProviderError(OcctreeError, ValueError):
    """A split-probability provider returned an unusable answer."""


class SpecError(ConfigError):
    """A synthetic scene description is invalid."""


class ParseError(OcctreeError, ValueError):
    """A file could not be decoded.

    ``offset`` is the byte offset (or line number for text formats, see
    ``unit``) at which decoding failed.
    """

    def __init__(self, message, offset=None, path=None, unit="byte"):
        self.offset = offset
        self.path = path
        self.unit = unit
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"{unit} {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class BadMagicError(ParseError):
    pass


class VersionError(ParseError):
    pass


class TruncationError(ParseError):
    pass


class TrailingDataError(ParseError):
    pass


class InvariantError(ParseError):
    """The file decoded cleanly but its content violates a domain invariant."""

"""Exception hierarchy shared by the library, the runtime, and the CLI."""


class HasteError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(HasteError):
    """A configuration value is out of range or inconsistent with the data."""


class ValidationError(HasteError):
    """Structurally well-formed input fails a semantic check (shapes, graphs)."""


class FormatError(HasteError):
    """A byte stream does not follow the container wire format."""


class CorruptionError(FormatError):
    """A container parses but fails its integrity checks (checksum, bounds)."""

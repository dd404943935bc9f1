"""Exception types shared across the toolkit."""


class EraseError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(EraseError, ValueError):
    """An operation received arguments outside its contract."""


class InvalidStateError(EraseError, RuntimeError):
    """An operation would produce an inconsistent state."""


class ProviderError(EraseError, RuntimeError):
    """An attention source cannot serve the requested layer or tokens."""


class UnknownModelError(EraseError, KeyError):
    """Lookup of a model id that has no built-in configuration."""

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0] if self.args else ""


class DataError(EraseError):
    """A file could not be read, decoded, or validated."""

"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument is outside the domain an operation accepts."""


class ManifestError(ValueError):
    """A pose manifest could not be parsed."""


class CodecError(ValueError):
    """A coded payload is corrupt or was produced with other settings."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class PacketError(ValueError):
    """A packet failed framing or integrity checks."""


class BackendMismatchError(RuntimeError):
    """Encoder and decoder radiance fields are not the same twin."""

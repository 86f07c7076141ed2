"""Exception taxonomy shared across the package."""


class FedmarkError(Exception):
    """Base class for all fedmark errors."""


class ConfigurationError(FedmarkError):
    """Invalid static configuration (bad arch, out-of-range parameter, key violation)."""


class DimensionError(FedmarkError):
    """Shape or length mismatch between runtime values."""


class InputError(FedmarkError):
    """Runtime input outside the operation's domain (empty dataset, zero weight, ...)."""


class FormatError(FedmarkError):
    """Malformed binary container. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemeMismatchError(FedmarkError, TypeError):
    """Homomorphic operation across incompatible ciphertexts."""


class AuthenticationError(FedmarkError):
    """Ciphertext decrypted with a key other than the one that produced it."""


class VerificationTransportError(FedmarkError):
    """Model API failed mid-verification; no verdict was produced."""


class ThresholdImpossible(FedmarkError):
    """No decision threshold meets the false-positive bound; increase the subset size."""


class StageError(FedmarkError):
    """An experiment stage failed. Carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage

"""Exception types shared across the codec."""


class CodecError(Exception):
    """Base class for all codec-specific failures."""


class DomainError(CodecError):
    """Input violates a documented precondition (range, shape, padding)."""


class ContainerError(CodecError):
    """Malformed bitstream container (bad magic, truncation, bad version)."""


class StreamCorruptionError(CodecError):
    """Entropy-coded payload cannot be decoded."""


class ModelMismatchError(CodecError):
    """Container was produced by a different model than the one decoding it."""


class ConfigError(CodecError):
    """Invalid or unknown configuration keys/values."""

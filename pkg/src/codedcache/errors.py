class CodedCacheError(Exception):
    pass


class ConfigError(CodedCacheError, ValueError):
    """Invalid model or experiment configuration."""


class DegenerateChunkError(ConfigError):
    """A chunk position is never watched (p^j = 0)."""


class DomainError(CodedCacheError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DecodeError(CodedCacheError, AssertionError):
    """A user could not reconstruct its chunk from the delivered messages."""

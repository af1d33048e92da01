"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A configuration object violates one of its constraints."""


class SchemaError(ValueError):
    """An input file does not follow the expected record layout."""


class StaleCacheError(RuntimeError):
    """Cached label embeddings no longer match the encoder or label set."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition (e.g. stepping without grads)."""

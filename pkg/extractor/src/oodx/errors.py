"""Error hierarchy. Everything raised on purpose derives from ExtractError
so the CLI can separate our failures from genuine bugs."""


class ExtractError(Exception):
    pass


class ConfigError(ExtractError):
    """Invalid job options (bad counts, negative noise, missing seed)."""


class CheckpointError(ExtractError):
    """Checkpoint file missing, unreadable, or not a known layout."""


class DataError(ExtractError):
    """Dataset file missing or malformed."""


class MissingHead(ExtractError):
    """The model exposes no final linear layer, so there is no reference
    point for the penultimate features."""

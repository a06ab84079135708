"""Exception types shared across the engine."""


class RankTuneError(Exception):
    """Base class for engine errors."""


class ValidationError(RankTuneError):
    """Input violates a documented precondition or invariant."""


class DomainError(ValidationError):
    """Argument outside its allowed domain (e.g. an unsupported unfold mode)."""


class FormatError(RankTuneError):
    """Malformed binary or text input (snapshot files, IDX files, configs)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IncompleteProbeError(RankTuneError):
    """A rank probe is missing (layer, mode, epoch) entries."""


class NumericalError(RankTuneError):
    """A numerical routine failed to produce a usable result."""


class ConfigError(RankTuneError):
    """Run configuration is unparseable or inconsistent."""

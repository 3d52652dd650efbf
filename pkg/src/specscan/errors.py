"""Exception types shared across the package."""


class SpecScanError(Exception):
    """Base class for every error raised by this package."""


class FormatError(SpecScanError):
    """A file is missing, malformed, or inconsistent with its header."""


class DataError(SpecScanError):
    """An in-memory object violates an invariant, or inputs do not line up."""


class ComputeError(SpecScanError):
    """A computation is degenerate for the given input (too few points, zero norm, ...)."""


class ConfigError(SpecScanError):
    """A configuration is incomplete or inconsistent for the requested operation."""


class StageError(SpecScanError):
    """A pipeline stage failed; carries the stage name for attribution."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage

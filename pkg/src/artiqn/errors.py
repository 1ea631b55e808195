"""Exception types shared across the package."""


class GenerationError(RuntimeError):
    """Environment generation could not satisfy its constraints."""


class NumericError(RuntimeError):
    """A numeric contract was violated (non-finite gradients, diverged loss)."""


class ConfigError(ValueError):
    """Invalid configuration file or override."""


class ScenarioError(ValueError):
    """Malformed scenario file."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint I/O failures."""


class ChecksumMismatchError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass

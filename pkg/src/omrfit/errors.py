"""Exception types shared across the package.

Each error class carries an ``exit_code`` that the CLI maps to its process
exit status: 2 for configuration/usage problems, 3 for data and file
problems, 4 for numerical failures.
"""


class OmrfitError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(OmrfitError):
    """Invalid configuration value (bad range, unknown option, ...)."""

    exit_code = 2


class DimensionError(OmrfitError):
    """Array arguments whose shapes do not fit together."""

    exit_code = 2


class ScheduleError(ConfigError):
    """Malformed or unsupported phase schedule string."""


class CameraError(OmrfitError):
    """Invalid camera parameters (non-positive scale, bad shapes)."""

    exit_code = 2


class DataError(OmrfitError):
    """Dataset-level problems: missing samples, id mismatches, bad hashes."""

    exit_code = 3


class IoError(OmrfitError):
    """Filesystem-level read/write failures."""

    exit_code = 3


class MetricError(OmrfitError):
    """Metric computation on unusable inputs."""

    exit_code = 3


class FormatError(OmrfitError):
    """Malformed serialized artifact (model JSON, PGM mask, checkpoint)."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericsError(OmrfitError):
    """Non-finite value produced during computation.

    ``primitive`` names the operation that produced the value; ``iteration``
    is filled in when the failure happens inside an optimization loop.
    """

    exit_code = 4

    def __init__(self, message, primitive=None, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.primitive = primitive
        self.iteration = iteration

"""Exception types shared across the package."""


class VariganError(Exception):
    """Base class for all package errors."""


class ShapeError(VariganError):
    """A tensor had the wrong shape, channel count, or spatial size."""


class SpecError(VariganError):
    """An architecture spec is internally inconsistent or unsupported."""


class ConfigError(VariganError):
    """A run config failed validation (unknown key, bad value, missing field)."""


class CheckpointError(VariganError):
    """A checkpoint is missing keys, has mismatched shapes, or wrong metadata."""


class DetectionError(VariganError):
    """Landmark detection failed on the given image."""


class GeneratorDriftError(VariganError):
    """Frozen generator parameters changed during training."""


class VerificationError(VariganError):
    """An invariant check failed during `verify`."""

"""Exception types shared across the toolkit."""


class AslError(Exception):
    """Base class for all toolkit errors."""


class InvalidParametersError(AslError):
    """Acquisition or model parameters violate their constraints."""


class ShapeMismatchError(AslError):
    """Operands do not agree in grid shape or tensor dimensions."""


class MaskError(AslError):
    """Mask is empty or inconsistent with the data it gates."""


class GeometryError(AslError):
    """Phantom geometry is degenerate or internally inconsistent."""


class DegenerateProtonDensityError(AslError):
    """A masked voxel carries a non-positive proton-density value."""


class DivergenceError(AslError):
    """Training or optimization produced a non-finite value."""


class ConfigError(AslError):
    """Run configuration is malformed or contains unknown keys."""


class ContainerError(AslError):
    """Base class for tensor-container I/O failures."""


class BadMagicError(ContainerError):
    """File does not start with the container magic bytes."""


class UnsupportedVersionError(ContainerError):
    """Container format version is not supported."""


class TruncatedPayloadError(ContainerError):
    """Payload length does not match the declared dimensions."""


class ManifestError(AslError):
    """Dataset manifest is missing files or checksums do not match."""

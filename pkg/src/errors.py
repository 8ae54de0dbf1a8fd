"""
Exception hierarchy shared by every unwrapping and analysis module.
"""


class UnwrapError(Exception):
    """Base class for all domain errors (input or validation failures)."""
    pass


class GapError(UnwrapError):
    """A transform chain or delta series has no entry for a required frame."""

    def __init__(self, frame, message=None):
        self.frame = frame
        super().__init__(message or f"missing entry for frame {frame}")


class DegenerateGeometryError(UnwrapError):
    pass


class NormalizationError(UnwrapError):
    pass


class DistortionInversionError(UnwrapError):
    pass


class ParallelRayError(UnwrapError):
    pass


class BehindCameraError(UnwrapError):
    pass


class TrackParseError(UnwrapError):
    """Malformed row in one of the CSV inputs."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class IntegrityError(UnwrapError):
    """Duplicate key in one of the CSV inputs."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SchemaError(UnwrapError):
    pass


class NamingError(UnwrapError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"cannot read a frame number from shot name {name!r}")


class ExtrapolationError(UnwrapError):
    def __init__(self, frame, first, last):
        self.frame = frame
        super().__init__(f"frame {frame} lies outside the keyframe span [{first}, {last}]")


class EmptyChainError(UnwrapError):
    pass


class BodyLengthUndefinedError(UnwrapError):
    pass


class ConfigError(UnwrapError):
    pass


class NotRepresentableError(UnwrapError):
    def __init__(self, frame, reason):
        self.frame = frame
        super().__init__(f"frame {frame}: image motion is not a 2D rigid transform ({reason})")


class DispersionError(UnwrapError):
    pass

"""Exception hierarchy shared across the package."""


class AsdError(Exception):
    """Base class for all package errors."""


class ConfigError(AsdError):
    pass


class DataError(AsdError):
    pass


class MissingArtifactError(AsdError):
    pass


class WavError(DataError):
    pass


class WavNotFoundError(WavError, FileNotFoundError):
    pass


class MalformedWavError(WavError):
    pass


class TruncatedWavError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class ShapeError(AsdError, ValueError):
    pass


class ModelFormatError(MissingArtifactError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass

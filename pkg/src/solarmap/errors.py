"""Exception types shared across the pipeline."""


class SolarMapError(Exception):
    """Base class for all pipeline errors."""


class MissingFile(SolarMapError):
    pass


class MalformedManifest(SolarMapError):
    pass


class DuplicateId(SolarMapError):
    pass


class DecodeError(SolarMapError):
    pass


class ShapeMismatch(SolarMapError):
    pass


class BadFractions(SolarMapError):
    pass


class IoError(SolarMapError):
    pass


class BadConfig(SolarMapError):
    pass


class ImportShapeMismatch(SolarMapError):
    pass


class UnknownLayer(SolarMapError):
    pass


class NonFiniteGradient(SolarMapError):
    pass


class UnlabeledSample(SolarMapError):
    pass


class EmptyDataset(SolarMapError):
    pass


class BadTarget(SolarMapError):
    pass


class EmptyMap(SolarMapError):
    pass


class MissingLabel(SolarMapError):
    pass


class BadN(SolarMapError):
    pass


class MissingRecord(SolarMapError):
    pass


class MissingMask(SolarMapError):
    pass


class CheckpointError(SolarMapError):
    pass


class ConfigError(SolarMapError):
    pass


class StageError(SolarMapError):
    pass

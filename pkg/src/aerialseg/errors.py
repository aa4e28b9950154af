"""Exception hierarchy shared by every subsystem."""


class AerialSegError(Exception):
    """Base class for all errors raised by aerialseg."""


class PlyParseError(AerialSegError):
    """Malformed PLY input. ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ClassMapError(AerialSegError):
    pass


class TileFormatError(AerialSegError):
    pass


class ManifestError(AerialSegError):
    pass


class SpatialError(AerialSegError):
    pass


class SamplingError(AerialSegError):
    pass


class EvaluationError(AerialSegError):
    pass


class ModelError(AerialSegError):
    pass

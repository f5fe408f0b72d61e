"""Typed failures raised across the pipeline.

Every error carries its class name into CLI output and HTTP error bodies, so
the names are part of the public surface.
"""


class RerouteError(Exception):
    """Base class for all pipeline errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__

    def __str__(self) -> str:
        msg = super().__str__()
        return f"{self.kind}: {msg}" if msg else self.kind


# advisory ingestion
class MissingField(RerouteError):
    def __init__(self, name: str):
        super().__init__(name)
        self.field = name


class MalformedTime(RerouteError):
    pass


class EmptyRange(RerouteError):
    pass


# weather store
class ManifestMismatch(RerouteError):
    pass


class MissingRaster(RerouteError):
    pass


class CorruptManifest(RerouteError):
    pass


class EmptyIntersection(RerouteError):
    pass


class SingleSnapshot(RerouteError):
    pass


# feature pipeline
class AllMissing(RerouteError):
    pass


class DegenerateRange(RerouteError):
    pass


class UnknownParameter(RerouteError):
    pass


class EmptyCell(RerouteError):
    pass


class CoverageGap(RerouteError):
    pass


# resampling
class TooFewPoints(RerouteError):
    pass


class DegenerateMinority(RerouteError):
    pass


class NoMajority(RerouteError):
    pass


# learners
class SingleClass(RerouteError):
    pass


class EmptyDataset(RerouteError):
    pass


class SchemaMismatch(RerouteError):
    pass


class KTooLarge(RerouteError):
    pass


class TooSmall(RerouteError):
    pass


class VersionMismatch(RerouteError):
    pass


class CorruptModel(RerouteError):
    pass


# evaluation
class LengthMismatch(RerouteError):
    pass


class OutOfRange(RerouteError):
    pass


class ClassTooSmall(RerouteError):
    pass


# configuration and service
class InvalidConfig(RerouteError):
    pass


class UnknownTarget(RerouteError):
    pass


class RangeUncovered(RerouteError):
    pass


class BadRequest(RerouteError):
    pass

"""Exception hierarchy shared by all regbench modules."""


class RegbenchError(Exception):
    """Base class for all engine errors."""


class InvalidGeometry(RegbenchError):
    """Latitude/longitude axes violate grid requirements."""


class ShapeError(RegbenchError):
    """Array shapes or grids are inconsistent."""


class UnknownChannel(RegbenchError):
    """A requested channel is not in the catalog."""


class CatalogMismatch(RegbenchError):
    """Two frames do not share the same variable catalog."""


class FormatError(RegbenchError):
    """A frame file has a bad magic, version, or header."""


class CorruptFile(RegbenchError):
    """A frame file failed its payload checksum."""


class DuplicateTimestamp(RegbenchError):
    """Two frames claim the same timestamp."""


class EmptySplit(RegbenchError):
    """An operation requires a non-empty split."""


class InvalidConfig(RegbenchError):
    """A configuration value is out of range or missing."""


class MissingClimatologyKey(RegbenchError):
    """No climatology entry for the requested (month, day, hour)."""


class MissingFrame(RegbenchError):
    """A required truth frame is absent from the manifest."""


class AdapterError(RegbenchError):
    """An external or built-in forecaster failed to produce a step."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class NonFiniteForecast(RegbenchError):
    """A forecaster or denoiser returned NaN or infinity."""


class ProtocolError(RegbenchError):
    """A wire message is malformed, truncated, or oversized."""


class RegionNotCovered(RegbenchError):
    """A requested region lies outside the available grid."""


class DegenerateAnomaly(RegbenchError):
    """ACC is undefined: an anomaly field has zero norm."""


class InsufficientMembers(RegbenchError):
    """Ensemble statistics need at least two members."""


class DegenerateSkill(RegbenchError):
    """SSR is undefined: the ensemble mean matches truth exactly."""


class ConfigError(RegbenchError):
    """Run configuration failed validation (CLI exit code 2)."""

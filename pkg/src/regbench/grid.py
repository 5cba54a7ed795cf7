"""Core immutable types for gridded atmospheric states and latitude weighting.

All in-memory arithmetic is float64; on-disk payloads may be float32 (see
:mod:`regbench.frameio`). Latitudes and longitudes are degrees; latitude is
converted to radians only inside cosine evaluation.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, ShapeError, UnknownChannel

PRESSURE_LEVELS_HPA = (50, 250, 500, 600, 700, 850, 925)
STEP_HOURS = 6
VALID_HOURS = (0, 6, 12, 18)


def _frozen_f64(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def _strictly_monotonic(axis: np.ndarray) -> bool:
    d = np.diff(axis)
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass(frozen=True)
class GridGeometry:
    """Latitude/longitude axes of a regular regional grid (cell centers)."""

    lat: np.ndarray
    lon: np.ndarray
    resolution_deg: float

    def __post_init__(self):
        object.__setattr__(self, "lat", _frozen_f64(self.lat))
        object.__setattr__(self, "lon", _frozen_f64(self.lon))
        if self.lat.ndim != 1 or self.lon.ndim != 1:
            raise InvalidGeometry("lat and lon must be 1-D axes")
        if self.lat.size < 1 or self.lon.size < 1:
            raise InvalidGeometry("grid must have at least one row and column")
        if np.any(np.abs(self.lat) >= 90.0):
            raise InvalidGeometry("latitudes must satisfy |lat| < 90")
        if self.lat.size > 1 and not _strictly_monotonic(self.lat):
            raise InvalidGeometry("latitude axis must be strictly monotonic")
        if self.lon.size > 1 and not _strictly_monotonic(self.lon):
            raise InvalidGeometry("longitude axis must be strictly monotonic")

    @property
    def shape(self) -> tuple[int, int]:
        return self.lat.size, self.lon.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridGeometry):
            return NotImplemented
        return (
            np.array_equal(self.lat, other.lat)
            and np.array_equal(self.lon, other.lon)
            and self.resolution_deg == other.resolution_deg
        )

    def __hash__(self):
        return hash((self.lat.tobytes(), self.lon.tobytes(), self.resolution_deg))


@dataclass(frozen=True)
class Channel:
    """One variable: surface (level=None) or on a pressure level in hPa."""

    name: str
    level: int | None
    units: str


@dataclass(frozen=True)
class VariableCatalog:
    """Ordered channel list; names unique, levels from the standard set."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise UnknownChannel("channel names must be unique within a catalog")
        for c in self.channels:
            if c.level is not None and c.level not in PRESSURE_LEVELS_HPA:
                raise InvalidGeometry(
                    f"pressure level {c.level} hPa not in {PRESSURE_LEVELS_HPA}"
                )

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.channels):
            if c.name == name:
                return i
        raise UnknownChannel(f"channel {name!r} not in catalog")

    def subset(self, names) -> "VariableCatalog":
        names = list(names)
        if not names:
            raise UnknownChannel("channel subset must not be empty")
        return VariableCatalog(tuple(self.channels[self.index_of(n)] for n in names))


def aligned_utc(timestamp: dt.datetime) -> dt.datetime:
    """Validate and normalize a timestamp to a 6-hour-aligned UTC instant."""
    if timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=dt.timezone.utc)
    else:
        timestamp = timestamp.astimezone(dt.timezone.utc)
    if (
        timestamp.hour not in VALID_HOURS
        or timestamp.minute
        or timestamp.second
        or timestamp.microsecond
    ):
        raise ShapeError(f"timestamp {timestamp.isoformat()} is not 6-hour aligned")
    return timestamp


@dataclass(frozen=True)
class FieldFrame:
    """One timestamped multi-channel grid state of shape (V, H, W).

    Frames are immutable after construction; transforms return new frames.
    """

    timestamp: dt.datetime
    values: np.ndarray
    catalog: VariableCatalog
    geometry: GridGeometry

    def __post_init__(self):
        object.__setattr__(self, "timestamp", aligned_utc(self.timestamp))
        object.__setattr__(self, "values", _frozen_f64(self.values))
        v = self.values
        if v.ndim != 3:
            raise ShapeError(f"frame values must be (V, H, W), got {v.shape}")
        h, w = self.geometry.shape
        if v.shape != (len(self.catalog), h, w):
            raise ShapeError(
                f"values shape {v.shape} inconsistent with catalog/geometry "
                f"({len(self.catalog)}, {h}, {w})"
            )
        if not np.all(np.isfinite(v)):
            raise ShapeError("frame values must all be finite")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def with_timestamp(self, timestamp: dt.datetime) -> "FieldFrame":
        return FieldFrame(timestamp, self.values, self.catalog, self.geometry)

    def with_values(self, values: np.ndarray) -> "FieldFrame":
        return FieldFrame(self.timestamp, values, self.catalog, self.geometry)

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.catalog.index_of(name)]


@dataclass(frozen=True)
class LatWeights:
    """Row weights w[i] > 0 with mean exactly 1 (cosine-of-latitude based)."""

    w: np.ndarray = field()

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen_f64(self.w))
        if self.w.ndim != 1 or self.w.size < 1:
            raise InvalidGeometry("weights must be a non-empty 1-D array")
        if np.any(self.w <= 0):
            raise InvalidGeometry("weights must be strictly positive")
        mean = float(np.mean(self.w))
        if abs(mean - 1.0) > 1e-12:
            raise InvalidGeometry(f"weights must average to 1, got {mean!r}")


def latitude_weights(geometry: GridGeometry) -> LatWeights:
    """Cosine-of-latitude row weights, normalized to mean 1.

    w[i] = cos(lat[i]) / ((1/H) * sum_i' cos(lat[i'])).
    """
    cos_lat = np.cos(np.radians(geometry.lat))
    return LatWeights(cos_lat / np.mean(cos_lat))


def weighted_area_mean(field2d: np.ndarray, weights: LatWeights) -> float:
    """Latitude-weighted area mean (1/(H*W)) * sum_ij w[i] * field[i, j]."""
    field2d = np.asarray(field2d, dtype=np.float64)
    if field2d.ndim != 2 or field2d.shape[0] != weights.w.size:
        raise ShapeError(
            f"field shape {field2d.shape} incompatible with {weights.w.size} weights"
        )
    return float(np.mean(weights.w[:, None] * field2d))


def subgrid_view(
    frame: FieldFrame,
    row_range: tuple[int, int] | None = None,
    col_range: tuple[int, int] | None = None,
    channel_subset=None,
) -> FieldFrame:
    """Select a sub-block of a frame; ranges are half-open [start, stop).

    Returns a new frame with correspondingly sliced geometry and catalog.
    ``None`` keeps an axis (or the channel set) whole.
    """
    v, h, w = frame.shape
    r0, r1 = row_range if row_range is not None else (0, h)
    c0, c1 = col_range if col_range is not None else (0, w)
    if not (0 <= r0 < r1 <= h) or not (0 <= c0 < c1 <= w):
        raise ShapeError(f"ranges ({r0},{r1})x({c0},{c1}) out of bounds for {h}x{w}")
    if channel_subset is None:
        catalog = frame.catalog
        idx = slice(None)
    else:
        catalog = frame.catalog.subset(channel_subset)
        idx = [frame.catalog.index_of(n) for n in channel_subset]
    geometry = GridGeometry(
        frame.geometry.lat[r0:r1], frame.geometry.lon[c0:c1], frame.geometry.resolution_deg
    )
    return FieldFrame(frame.timestamp, frame.values[idx, r0:r1, c0:c1], catalog, geometry)

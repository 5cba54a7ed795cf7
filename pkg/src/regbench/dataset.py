"""Dataset manifest, split construction, normalization, synthetic data.

A dataset on disk is a directory of RBF1 frame files plus a ``manifest.json``
of the form::

    {"catalog": [{"name", "level", "units"}, ...],
     "lat": [...], "lon": [...], "step_hours": 6,
     "splits": {"train": [{"path", "time"}, ...], "val": [...], "test": [...]}}

Paths are relative to the manifest location; the manifest is written
atomically (temp file + rename). The synthetic generator is a desk-scale
stand-in for the multi-terabyte regional reanalysis: deterministic per
(seed, timestamp), so any frame can be regenerated independently.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from numpy.random import Generator, Philox

from .errors import (
    CatalogMismatch,
    DuplicateTimestamp,
    EmptySplit,
    InvalidConfig,
    MissingFrame,
    ShapeError,
)
from .frameio import epoch_seconds, read_frame, write_frame
from .grid import (
    STEP_HOURS,
    Channel,
    FieldFrame,
    GridGeometry,
    VariableCatalog,
    aligned_utc,
)

STD_FLOOR = 1e-6
SPLIT_NAMES = ("train", "val", "test")


class FrameRef(NamedTuple):
    """One manifest entry: a frame file path and its timestamp."""

    path: str
    time: dt.datetime


@dataclass(frozen=True)
class DatasetManifest:
    catalog: VariableCatalog
    geometry: GridGeometry
    step_hours: int
    splits: dict[str, tuple[FrameRef, ...]]
    root: Path | None = None

    def __post_init__(self):
        step = dt.timedelta(hours=self.step_hours)
        seen: dict[dt.datetime, str] = {}
        ranges = []
        for name, refs in self.splits.items():
            for a, b in zip(refs, refs[1:]):
                if b.time <= a.time:
                    raise DuplicateTimestamp(
                        f"split {name!r} timestamps not strictly increasing at {b.time}"
                    )
                if (b.time - a.time) % step:
                    raise ShapeError(
                        f"split {name!r} timestamps not aligned to {self.step_hours} h"
                    )
            for ref in refs:
                if ref.time in seen:
                    raise DuplicateTimestamp(
                        f"timestamp {ref.time} in both {seen[ref.time]!r} and {name!r}"
                    )
                seen[ref.time] = name
            if refs:
                ranges.append((refs[0].time, refs[-1].time, name))
        ranges.sort()
        for (_, end_a, name_a), (start_b, _, name_b) in zip(ranges, ranges[1:]):
            if start_b <= end_a:
                raise DuplicateTimestamp(
                    f"split time ranges {name_a!r} and {name_b!r} overlap"
                )

    def frames(self, split: str) -> tuple[FrameRef, ...]:
        if split not in self.splits:
            raise EmptySplit(f"no split named {split!r}")
        return self.splits[split]

    def resolve(self, ref: FrameRef) -> Path:
        p = Path(ref.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def read(self, ref: FrameRef) -> FieldFrame:
        frame = read_frame(self.resolve(ref), resolution_deg=self.geometry.resolution_deg)
        if frame.timestamp != ref.time:
            raise DuplicateTimestamp(
                f"file {ref.path} is stamped {frame.timestamp}, manifest says {ref.time}"
            )
        return frame

    def ref_at(self, timestamp: dt.datetime, split: str | None = None) -> FrameRef:
        timestamp = aligned_utc(timestamp)
        names = [split] if split else list(self.splits)
        for name in names:
            for ref in self.splits.get(name, ()):
                if ref.time == timestamp:
                    return ref
        raise MissingFrame(f"no frame at {timestamp.isoformat()}")

    def read_at(self, timestamp: dt.datetime, split: str | None = None) -> FieldFrame:
        return self.read(self.ref_at(timestamp, split))

    def to_json(self) -> dict:
        return {
            "catalog": [
                {"name": c.name, "level": c.level, "units": c.units}
                for c in self.catalog.channels
            ],
            "lat": self.geometry.lat.tolist(),
            "lon": self.geometry.lon.tolist(),
            "step_hours": self.step_hours,
            "splits": {
                name: [
                    {"path": ref.path, "time": ref.time.strftime("%Y-%m-%dT%H:%M:%SZ")}
                    for ref in refs
                ]
                for name, refs in self.splits.items()
            },
        }


def _parse_time(text: str) -> dt.datetime:
    return dt.datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=dt.timezone.utc)


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest.to_json(), indent=1), encoding="utf-8")
    os.replace(tmp, path)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    catalog = VariableCatalog(
        tuple(Channel(c["name"], c["level"], c["units"]) for c in doc["catalog"])
    )
    lat = np.asarray(doc["lat"], dtype=np.float64)
    res = float(abs(lat[1] - lat[0])) if lat.size > 1 else 1.0
    geometry = GridGeometry(lat, doc["lon"], res)
    splits = {
        name: tuple(FrameRef(e["path"], _parse_time(e["time"])) for e in entries)
        for name, entries in doc["splits"].items()
    }
    return DatasetManifest(catalog, geometry, doc["step_hours"], splits, root=path.parent)


def build_splits(
    refs,
    boundaries: dict[str, tuple[int, int]],
    catalog: VariableCatalog,
    geometry: GridGeometry,
    root: Path | None = None,
    step_hours: int = STEP_HOURS,
) -> DatasetManifest:
    """Assign timestamped frame files to splits by calendar year.

    ``boundaries`` maps split name to an inclusive (first_year, last_year)
    range. Every frame falls in exactly one split; frames outside all ranges
    are dropped. Year ranges must not overlap.
    """
    years_seen: dict[int, str] = {}
    for name, (y0, y1) in boundaries.items():
        for y in range(y0, y1 + 1):
            if y in years_seen:
                raise InvalidConfig(f"year {y} in both {years_seen[y]!r} and {name!r}")
            years_seen[y] = name
    refs = sorted((FrameRef(p, aligned_utc(t)) for p, t in refs), key=lambda r: r.time)
    for a, b in zip(refs, refs[1:]):
        if a.time == b.time:
            raise DuplicateTimestamp(f"duplicate frame timestamp {a.time}")
    splits: dict[str, list[FrameRef]] = {name: [] for name in boundaries}
    for ref in refs:
        name = years_seen.get(ref.time.year)
        if name is not None:
            splits[name].append(ref)
    return DatasetManifest(
        catalog, geometry, step_hours, {k: tuple(v) for k, v in splits.items()}, root=root
    )


def scan_frame_files(paths, resolution_deg: float | None = None):
    """Read headers of RBF1 files, checking they share one catalog/geometry.

    Returns (refs, catalog, geometry) suitable for :func:`build_splits`.
    """
    refs, catalog, geometry = [], None, None
    for p in paths:
        frame = read_frame(p, resolution_deg=resolution_deg)
        if catalog is None:
            catalog, geometry = frame.catalog, frame.geometry
        elif frame.catalog != catalog:
            raise CatalogMismatch(f"{p} has a different variable catalog")
        elif frame.geometry != geometry:
            raise ShapeError(f"{p} has a different grid geometry")
        refs.append((str(p), frame.timestamp))
    if catalog is None:
        raise EmptySplit("no frame files supplied")
    return refs, catalog, geometry


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean and standard deviation in physical units."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if np.any(self.std < STD_FLOOR):
            raise InvalidConfig(f"std below floor {STD_FLOOR}")

    def to_json(self) -> dict:
        return {
            "channels": list(self.names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "NormalizationStats":
        return cls(tuple(doc["channels"]), doc["mean"], doc["std"])


def compute_normalization_stats(
    manifest: DatasetManifest, split: str = "train"
) -> NormalizationStats:
    """Arithmetic mean and population std over all (t, i, j) per channel."""
    refs = manifest.frames(split)
    if not refs:
        raise EmptySplit(f"split {split!r} is empty")
    v = len(manifest.catalog)
    total = np.zeros(v)
    total_sq = np.zeros(v)
    count = 0
    for ref in refs:
        vals = manifest.read(ref).values
        total += vals.sum(axis=(1, 2))
        total_sq += np.square(vals).sum(axis=(1, 2))
        count += vals.shape[1] * vals.shape[2]
    mean = total / count
    var = np.maximum(total_sq / count - mean**2, 0.0)
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormalizationStats(manifest.catalog.names, mean, std)


def _check_catalog(frame: FieldFrame, stats: NormalizationStats) -> None:
    if frame.catalog.names != stats.names:
        raise CatalogMismatch("frame catalog does not match normalization stats")


def normalize(frame: FieldFrame, stats: NormalizationStats) -> FieldFrame:
    _check_catalog(frame, stats)
    scaled = (frame.values - stats.mean[:, None, None]) / stats.std[:, None, None]
    return frame.with_values(scaled)


def denormalize(frame: FieldFrame, stats: NormalizationStats) -> FieldFrame:
    _check_catalog(frame, stats)
    return frame.with_values(frame.values * stats.std[:, None, None] + stats.mean[:, None, None])


# -- synthetic data ----------------------------------------------------------

_BASE_CHANNELS = (
    Channel("t2m", None, "K"),
    Channel("u10", None, "m s-1"),
    Channel("v10", None, "m s-1"),
    Channel("prmsl", None, "Pa"),
    Channel("z500", 500, "m"),
    Channel("t850", 850, "K"),
    Channel("u700", 700, "m s-1"),
    Channel("rh925", 925, "%"),
)


def default_catalog(n_channels: int) -> VariableCatalog:
    chans = []
    for k in range(n_channels):
        base = _BASE_CHANNELS[k % len(_BASE_CHANNELS)]
        suffix = "" if k < len(_BASE_CHANNELS) else f"_{k // len(_BASE_CHANNELS)}"
        chans.append(Channel(base.name + suffix, base.level, base.units))
    return VariableCatalog(tuple(chans))


@dataclass(frozen=True)
class SyntheticConfig:
    """Deterministic test-data generator settings.

    Fields are a sum of a calendar-keyed seasonal cycle, a diurnal cycle, a
    fixed meridional gradient, a westward-advecting zonal sine pattern, and
    seeded per-timestamp noise. The seasonal phase depends only on
    (month, day, hour), so with zero advection and zero noise the signal is
    exactly calendar-periodic. Advection with an integer number of cycles
    per day is also calendar-periodic at 6-hourly sampling.
    """

    seed: int = 0
    n_channels: int = 4
    height: int = 16
    width: int = 16
    start_year: int = 2001
    years: int = 2
    lat0: float = 6.0
    lon0: float = 66.6
    resolution_deg: float = 0.12
    base_value: float = 15.0
    seasonal_amplitude: float = 5.0
    diurnal_amplitude: float = 2.0
    meridional_gradient: float = 0.5
    advection_amplitude: float = 3.0
    advection_cycles_per_day: float = 0.5
    advection_wavenumber: int = 2
    noise_amplitude: float = 0.5

    def geometry(self) -> GridGeometry:
        lat = self.lat0 + self.resolution_deg * np.arange(self.height)
        lon = self.lon0 + self.resolution_deg * np.arange(self.width)
        return GridGeometry(lat, lon, self.resolution_deg)

    def catalog(self) -> VariableCatalog:
        return default_catalog(self.n_channels)


# Day-of-year slots from a leap-year month-length table, so a given
# (month, day, hour) maps to the same seasonal phase in every year.
_LEAP_CUMDAYS = np.cumsum([0, 31, 29, 31, 30, 31, 30, 31, 31, 30, 31, 30]).tolist()


def _calendar_phase(t: dt.datetime) -> float:
    slot = _LEAP_CUMDAYS[t.month - 1] + (t.day - 1) + t.hour / 24.0
    return slot / 366.0


def synthetic_frame(config: SyntheticConfig, timestamp: dt.datetime) -> FieldFrame:
    """The frame at one timestamp; bit-identical however it is reached."""
    t = aligned_utc(timestamp)
    geometry = config.geometry()
    catalog = config.catalog()
    v, h, w = config.n_channels, config.height, config.width
    season = _calendar_phase(t)
    t_days = epoch_seconds(t) / 86400.0
    chan = np.arange(v, dtype=np.float64)[:, None, None]
    lat_dev = (geometry.lat - geometry.lat.mean())[None, :, None]
    x_frac = (np.arange(w, dtype=np.float64) / w)[None, None, :]

    values = (
        config.base_value
        + 3.0 * chan
        + config.seasonal_amplitude * np.sin(2 * np.pi * season + 0.7 * chan)
        + config.diurnal_amplitude * np.sin(2 * np.pi * t.hour / 24.0 + 0.4 * chan)
        + config.meridional_gradient * lat_dev
        + config.advection_amplitude
        * np.sin(
            2
            * np.pi
            * (
                config.advection_wavenumber * x_frac
                + config.advection_cycles_per_day * t_days
            )
            + 0.2 * chan
        )
    )
    values = np.broadcast_to(values, (v, h, w)).copy()
    if config.noise_amplitude:
        key = np.array(
            [config.seed & 0xFFFFFFFFFFFFFFFF, epoch_seconds(t) & 0xFFFFFFFFFFFFFFFF],
            dtype=np.uint64,
        )
        rng = Generator(Philox(key=key))
        values += config.noise_amplitude * rng.standard_normal((v, h, w))
    # Stored payloads are float32; round now so regeneration is bit-exact.
    values = values.astype(np.float32).astype(np.float64)
    return FieldFrame(t, values, catalog, geometry)


def synthetic_timestamps(config: SyntheticConfig):
    if config.years < 1:
        raise EmptySplit("synthetic dataset needs at least one year")
    t = dt.datetime(config.start_year, 1, 1, tzinfo=dt.timezone.utc)
    end = dt.datetime(config.start_year + config.years, 1, 1, tzinfo=dt.timezone.utc)
    step = dt.timedelta(hours=STEP_HOURS)
    out = []
    while t < end:
        out.append(t)
        t += step
    return out


def default_split_years(config: SyntheticConfig) -> dict[str, tuple[int, int]]:
    last = config.start_year + config.years - 1
    if config.years >= 3:
        return {
            "train": (config.start_year, last - 2),
            "val": (last - 1, last - 1),
            "test": (last, last),
        }
    if config.years == 2:
        return {"train": (config.start_year, config.start_year), "val": (last, last), "test": (last + 1, last + 1)}
    return {"train": (config.start_year, last), "val": (last + 1, last + 1), "test": (last + 2, last + 2)}


def generate_synthetic_dataset(
    config: SyntheticConfig,
    out_dir,
    split_years: dict[str, tuple[int, int]] | None = None,
) -> DatasetManifest:
    """Write the synthetic frames and manifest; same seed ⇒ identical bytes."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    refs = []
    for t in synthetic_timestamps(config):
        name = f"frames/{t.strftime('%Y-%m-%dT%H')}.rbf"
        write_frame(synthetic_frame(config, t), out_dir / name, dtype="float32")
        refs.append((name, t))
    manifest = build_splits(
        refs,
        split_years or default_split_years(config),
        config.catalog(),
        config.geometry(),
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# -- coarse companion --------------------------------------------------------

def block_mean(values: np.ndarray, factor: int) -> np.ndarray:
    """Mean over factor x factor blocks of a (V, H, W) array, truncating."""
    v, h, w = values.shape
    hc, wc = h // factor, w // factor
    if hc < 1 or wc < 1:
        raise ShapeError(f"grid {h}x{w} too small to downsample by {factor}")
    trimmed = values[:, : hc * factor, : wc * factor]
    return trimmed.reshape(v, hc, factor, wc, factor).mean(axis=(2, 4))


def coarse_geometry(geometry: GridGeometry, factor: int) -> GridGeometry:
    h, w = geometry.shape
    hc, wc = h // factor, w // factor
    lat = geometry.lat[: hc * factor].reshape(hc, factor).mean(axis=1)
    lon = geometry.lon[: wc * factor].reshape(wc, factor).mean(axis=1)
    return GridGeometry(lat, lon, geometry.resolution_deg * factor)


def coarse_companion(manifest: DatasetManifest, factor: int, out_dir) -> DatasetManifest:
    """Block-mean downsampled copy of a dataset (the coarse-analysis stand-in)."""
    if factor < 2:
        raise InvalidConfig("downsampling factor must be at least 2")
    out_dir = Path(out_dir)
    (out_dir / "frames").mkdir(parents=True, exist_ok=True)
    geometry = coarse_geometry(manifest.geometry, factor)
    splits: dict[str, tuple] = {}
    for name, refs in manifest.splits.items():
        out_refs = []
        for ref in refs:
            frame = manifest.read(ref)
            coarse = FieldFrame(
                frame.timestamp, block_mean(frame.values, factor), frame.catalog, geometry
            )
            rel = f"frames/{ref.time.strftime('%Y-%m-%dT%H')}.rbf"
            write_frame(coarse, out_dir / rel, dtype="float64")
            out_refs.append(FrameRef(rel, ref.time))
        splits[name] = tuple(out_refs)
    coarse_manifest = DatasetManifest(
        manifest.catalog, geometry, manifest.step_hours, splits, root=out_dir
    )
    save_manifest(coarse_manifest, out_dir / "manifest.json")
    return coarse_manifest

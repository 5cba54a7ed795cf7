"""Climatology and persistence reference forecasters.

Climatology is keyed by (month, day, hour-of-day) — never by day-of-year —
so Feb 29 has its own key and never aliases Mar 1. The fitted table is the
per-key arithmetic mean over all training frames, accumulated in timestamp
order so the result is independent of the order frames are supplied in.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest
from .errors import EmptySplit, MissingClimatologyKey
from .frameio import read_frame, write_frame
from .grid import FieldFrame, GridGeometry, VariableCatalog

ClimKey = tuple[int, int, int]


def clim_key(timestamp: dt.datetime) -> ClimKey:
    return (timestamp.month, timestamp.day, timestamp.hour)


def _key_str(key: ClimKey) -> str:
    return f"{key[0]:02d}-{key[1]:02d}-{key[2]:02d}"


@dataclass(frozen=True)
class ClimatologyTable:
    """Mean field per (month, day, hour) key, with per-key sample counts."""

    catalog: VariableCatalog
    geometry: GridGeometry
    means: dict[ClimKey, np.ndarray]
    counts: dict[ClimKey, int]
    source_split: str

    def mean_frame(self, timestamp: dt.datetime) -> np.ndarray:
        key = clim_key(timestamp)
        if key not in self.means:
            raise MissingClimatologyKey(f"no climatology for {_key_str(key)}")
        return self.means[key]


def fit_climatology(manifest: DatasetManifest, split: str = "train") -> ClimatologyTable:
    refs = manifest.frames(split)
    if not refs:
        raise EmptySplit(f"split {split!r} is empty")
    sums: dict[ClimKey, np.ndarray] = {}
    counts: dict[ClimKey, int] = {}
    # Manifest order is already chronological; accumulation order is fixed,
    # so refitting after any permutation of the inputs is bit-identical.
    for ref in refs:
        key = clim_key(ref.time)
        vals = manifest.read(ref).values
        if key in sums:
            sums[key] = sums[key] + vals
            counts[key] += 1
        else:
            sums[key] = vals.copy()
            counts[key] = 1
    means = {k: s / counts[k] for k, s in sums.items()}
    return ClimatologyTable(manifest.catalog, manifest.geometry, means, counts, split)


def climatology_forecast(table: ClimatologyTable, timestamp: dt.datetime) -> FieldFrame:
    """The stored mean frame for the timestamp's key, restamped to it."""
    return FieldFrame(timestamp, table.mean_frame(timestamp), table.catalog, table.geometry)


def persistence_forecast(initial: FieldFrame, lead_steps: int) -> FieldFrame:
    """The initial values restamped lead_steps x 6 h into the future."""
    if lead_steps < 0:
        raise ValueError("lead_steps must be non-negative")
    return initial.with_timestamp(initial.timestamp + dt.timedelta(hours=6 * lead_steps))


# Tables serialize as a directory of RBF1 frames keyed "MM-DD-HH" plus a JSON
# index. Stored frames are stamped in year 2000 (a leap year) so every key,
# including 02-29, carries a valid aligned timestamp.
_TABLE_YEAR = 2000


def save_climatology(table: ClimatologyTable, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {"source_split": table.source_split, "keys": {}}
    for key in sorted(table.means):
        name = _key_str(key)
        stamp = dt.datetime(_TABLE_YEAR, key[0], key[1], key[2], tzinfo=dt.timezone.utc)
        frame = FieldFrame(stamp, table.means[key], table.catalog, table.geometry)
        write_frame(frame, out_dir / f"{name}.rbf", dtype="float64")
        index["keys"][name] = {"path": f"{name}.rbf", "count": table.counts[key]}
    (out_dir / "index.json").write_text(json.dumps(index, indent=1), encoding="utf-8")


def load_climatology(in_dir) -> ClimatologyTable:
    in_dir = Path(in_dir)
    index = json.loads((in_dir / "index.json").read_text(encoding="utf-8"))
    means: dict[ClimKey, np.ndarray] = {}
    counts: dict[ClimKey, int] = {}
    catalog = geometry = None
    for name, entry in index["keys"].items():
        month, day, hour = (int(p) for p in name.split("-"))
        frame = read_frame(in_dir / entry["path"])
        means[(month, day, hour)] = frame.values
        counts[(month, day, hour)] = int(entry["count"])
        catalog, geometry = frame.catalog, frame.geometry
    if catalog is None:
        raise EmptySplit("climatology directory has no keys")
    return ClimatologyTable(catalog, geometry, means, counts, index["source_split"])

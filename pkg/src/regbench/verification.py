"""Latitude-weighted verification metrics and test-set aggregation.

Per-variable metrics for a single valid time: RMSE, anomaly correlation
(ACC), the kernel form of CRPS, ensemble spread, and the spread/skill
ratio (SSR). ``evaluate_run`` aggregates them over initialization times
into a :class:`LeadTimeReport`: for each (variable, lead, metric) the
arithmetic mean of the per-initialization values, with sample counts.
Aggregation is a fixed-order reduction, so reports are byte-identical
regardless of worker count.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import ClimatologyTable
from .dataset import DatasetManifest
from .engine import Trajectory
from .errors import (
    CatalogMismatch,
    DegenerateAnomaly,
    DegenerateSkill,
    InsufficientMembers,
    InvalidConfig,
    MissingFrame,
    RegionNotCovered,
    ShapeError,
)
from .grid import (
    STEP_HOURS,
    FieldFrame,
    LatWeights,
    latitude_weights,
    subgrid_view,
    weighted_area_mean,
)

MASK_FULL = "full"
MASK_INTERIOR = "interior"


@dataclass(frozen=True)
class EnsembleForecast:
    """M member frames sharing one timestamp, catalog, and geometry."""

    timestamp: dt.datetime
    members: np.ndarray  # (M, V, H, W)
    catalog: object
    geometry: object

    def __post_init__(self):
        m = np.asarray(self.members, dtype=np.float64)
        object.__setattr__(self, "members", m)
        if m.ndim != 4 or m.shape[0] < 1:
            raise ShapeError(f"ensemble members must be (M, V, H, W), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ShapeError("ensemble members must be finite")

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def mean_frame(self) -> FieldFrame:
        return FieldFrame(
            self.timestamp, self.members.mean(axis=0), self.catalog, self.geometry
        )


def _paired(forecast: FieldFrame, truth: FieldFrame) -> None:
    if forecast.catalog != truth.catalog:
        raise CatalogMismatch("forecast and truth catalogs differ")
    if forecast.values.shape != truth.values.shape:
        raise ShapeError(
            f"forecast shape {forecast.values.shape} != truth shape {truth.values.shape}"
        )


def rmse(forecast: FieldFrame, truth: FieldFrame, weights: LatWeights) -> np.ndarray:
    """Latitude-weighted root-mean-square error, one value per channel."""
    _paired(forecast, truth)
    sq = np.square(forecast.values - truth.values)
    return np.array(
        [np.sqrt(weighted_area_mean(sq[v], weights)) for v in range(sq.shape[0])]
    )


def acc(
    forecast: FieldFrame,
    truth: FieldFrame,
    climatology_values: np.ndarray,
    weights: LatWeights,
) -> np.ndarray:
    """Anomaly correlation coefficient against a climatological mean."""
    _paired(forecast, truth)
    clim = np.asarray(climatology_values, dtype=np.float64)
    if clim.shape != forecast.values.shape:
        raise ShapeError(f"climatology shape {clim.shape} != field shape {forecast.values.shape}")
    f_anom = forecast.values - clim
    t_anom = truth.values - clim
    w = weights.w[None, :, None]
    num = np.sum(w * f_anom * t_anom, axis=(1, 2))
    f_norm = np.sum(w * np.square(f_anom), axis=(1, 2))
    t_norm = np.sum(w * np.square(t_anom), axis=(1, 2))
    if np.any(f_norm == 0) or np.any(t_norm == 0):
        raise DegenerateAnomaly("an anomaly field has zero norm; ACC undefined")
    return num / np.sqrt(f_norm * t_norm)


def crps(ensemble: EnsembleForecast, truth: FieldFrame, weights: LatWeights) -> np.ndarray:
    """Kernel CRPS: E|x - X| - (1/2) E|x - x'|, both terms latitude-weighted.

    Uses the plain 1/M^2 estimator for the second term; set ``fair=True``
    for the bias-corrected 1/(M(M-1)) variant.
    """
    return _crps_impl(ensemble, truth, weights, fair=False)


def crps_fair(ensemble: EnsembleForecast, truth: FieldFrame, weights: LatWeights) -> np.ndarray:
    return _crps_impl(ensemble, truth, weights, fair=True)


def _crps_impl(ensemble, truth, weights, fair: bool) -> np.ndarray:
    members = ensemble.members
    if members.shape[1:] != truth.values.shape:
        raise ShapeError(
            f"members shape {members.shape[1:]} != truth shape {truth.values.shape}"
        )
    m = members.shape[0]
    if fair and m < 2:
        raise InsufficientMembers("fair CRPS needs at least two members")
    term1 = np.mean(np.abs(members - truth.values[None]), axis=0)
    pair_sum = np.abs(members[:, None] - members[None, :]).sum(axis=(0, 1))
    denom = m * (m - 1) if fair else m * m
    term2 = pair_sum / (2 * denom) if denom else np.zeros_like(term1)
    pointwise = term1 - term2
    return np.array(
        [weighted_area_mean(pointwise[v], weights) for v in range(pointwise.shape[0])]
    )


def spread(ensemble: EnsembleForecast, weights: LatWeights) -> np.ndarray:
    """Sqrt of the latitude-weighted mean per-point ensemble variance."""
    if ensemble.size < 2:
        raise InsufficientMembers("spread needs at least two members")
    var = np.var(ensemble.members, axis=0, ddof=1)
    return np.array(
        [np.sqrt(weighted_area_mean(var[v], weights)) for v in range(var.shape[0])]
    )


def ssr(ensemble: EnsembleForecast, truth: FieldFrame, weights: LatWeights) -> np.ndarray:
    """Spread over the RMSE of the ensemble mean; ~1 means calibrated."""
    sp = spread(ensemble, weights)
    skill = rmse(ensemble.mean_frame(), truth, weights)
    if np.any(skill == 0):
        raise DegenerateSkill("ensemble-mean RMSE is zero; SSR undefined")
    return sp / skill


# -- aggregation --------------------------------------------------------------


@dataclass
class LeadTimeReport:
    """Per (variable, lead hours, metric) aggregate values and counts."""

    rows: dict[tuple[str, int, str], tuple[float, int]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def value(self, variable: str, lead_hours: int, metric: str) -> float:
        return self.rows[(variable, lead_hours, metric)][0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["variable", "lead_hours", "metric", "value", "count"])
        for (var, lead, metric) in sorted(self.rows):
            value, count = self.rows[(var, lead, metric)]
            writer.writerow([var, lead, metric, repr(float(value)), count])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "rows": [
                {
                    "variable": var,
                    "lead_hours": lead,
                    "metric": metric,
                    "value": self.rows[(var, lead, metric)][0],
                    "count": self.rows[(var, lead, metric)][1],
                }
                for (var, lead, metric) in sorted(self.rows)
            ],
        }


DETERMINISTIC_METRICS = ("rmse", "acc")
ENSEMBLE_METRICS = ("crps", "spread", "ssr")


def _masked(frame: FieldFrame, mask_policy: str, halo_width: int) -> FieldFrame:
    if mask_policy == MASK_FULL or halo_width == 0:
        return frame
    if mask_policy != MASK_INTERIOR:
        raise InvalidConfig(f"unknown mask policy {mask_policy!r}")
    _, h, w = frame.shape
    k = halo_width
    if 2 * k >= min(h, w):
        raise InvalidConfig(f"interior mask of width {k} empties a {h}x{w} grid")
    return subgrid_view(frame, (k, h - k), (k, w - k))


def evaluate_run(
    trajectories: list[Trajectory],
    manifest: DatasetManifest,
    metrics=DETERMINISTIC_METRICS,
    mask_policy: str = MASK_FULL,
    climatology: ClimatologyTable | None = None,
    halo_width: int = 0,
    workers: int = 1,
    run_id: str = "",
) -> LeadTimeReport:
    """Score trajectories against truth, averaged over initializations.

    Lead 0 compares the (truth) initial state with itself. The interior
    mask policy excludes the forced halo ring from every field uniformly.
    """
    if not trajectories:
        raise InvalidConfig("no trajectories to evaluate")
    if "acc" in metrics and climatology is None:
        raise InvalidConfig("ACC needs a climatology table")
    step = dt.timedelta(hours=STEP_HOURS)
    leads = trajectories[0].leads
    names = manifest.catalog.names

    def score(task):
        traj, lead = task
        valid = traj.init_time + lead * step
        truth = manifest.read_at(valid)
        forecast = truth if lead == 0 else traj.at_lead(lead)
        forecast = _masked(forecast, mask_policy, halo_width)
        truth = _masked(truth, mask_policy, halo_width)
        weights = latitude_weights(truth.geometry)
        out = {}
        if "rmse" in metrics:
            out["rmse"] = rmse(forecast, truth, weights)
        if "acc" in metrics:
            clim = FieldFrame(
                valid, climatology.mean_frame(valid), manifest.catalog, manifest.geometry
            )
            clim = _masked(clim, mask_policy, halo_width)
            out["acc"] = acc(forecast, truth, clim.values, weights)
        return out

    tasks = [(traj, lead) for traj in trajectories for lead in range(leads + 1)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, tasks))
    else:
        results = [score(t) for t in tasks]

    sums: dict[tuple[str, int, str], float] = {}
    counts: dict[tuple[str, int, str], int] = {}
    for (traj, lead), scores in zip(tasks, results):
        for metric, per_var in scores.items():
            for v, var in enumerate(names):
                key = (var, lead * STEP_HOURS, metric)
                sums[key] = sums.get(key, 0.0) + float(per_var[v])
                counts[key] = counts.get(key, 0) + 1
    report = LeadTimeReport(
        rows={k: (sums[k] / counts[k], counts[k]) for k in sums},
        metadata={
            "run_id": run_id,
            "conditioning": trajectories[0].conditioning,
            "mask_policy": mask_policy,
            "halo_width": halo_width,
            "aggregation": "mean_of_init_metrics",
            "inits": len(trajectories),
            "climatology": "train_split_table" if climatology is not None else None,
        },
    )
    return report


def evaluate_ensembles(
    items: list[tuple[dt.datetime, int, EnsembleForecast]],
    manifest: DatasetManifest,
    metrics=ENSEMBLE_METRICS,
    mask_policy: str = MASK_FULL,
    halo_width: int = 0,
    workers: int = 1,
    run_id: str = "",
) -> LeadTimeReport:
    """Score (init_time, lead, ensemble) items against truth."""
    if not items:
        raise InvalidConfig("no ensembles to evaluate")
    step = dt.timedelta(hours=STEP_HOURS)
    names = manifest.catalog.names

    def score(task):
        init, lead, ens = task
        valid = init + lead * step
        if ens.timestamp != valid:
            raise MissingFrame(f"ensemble stamped {ens.timestamp}, expected {valid}")
        truth = _masked(manifest.read_at(valid), mask_policy, halo_width)
        members = ens.members
        if mask_policy == MASK_INTERIOR and halo_width > 0:
            k = halo_width
            members = members[:, :, k:-k, k:-k]
        masked_ens = EnsembleForecast(valid, members, truth.catalog, truth.geometry)
        weights = latitude_weights(truth.geometry)
        out = {}
        if "crps" in metrics:
            out["crps"] = crps(masked_ens, truth, weights)
        if "spread" in metrics:
            out["spread"] = spread(masked_ens, weights)
        if "ssr" in metrics:
            out["ssr"] = ssr(masked_ens, truth, weights)
        if "rmse" in metrics:
            out["rmse"] = rmse(masked_ens.mean_frame(), truth, weights)
        return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, items))
    else:
        results = [score(t) for t in items]

    sums: dict[tuple[str, int, str], float] = {}
    counts: dict[tuple[str, int, str], int] = {}
    for (init, lead, _), scores in zip(items, results):
        for metric, per_var in scores.items():
            for v, var in enumerate(names):
                key = (var, lead * STEP_HOURS, metric)
                sums[key] = sums.get(key, 0.0) + float(per_var[v])
                counts[key] = counts.get(key, 0) + 1
    return LeadTimeReport(
        rows={k: (sums[k] / counts[k], counts[k]) for k in sums},
        metadata={
            "run_id": run_id,
            "mask_policy": mask_policy,
            "halo_width": halo_width,
            "aggregation": "mean_of_init_metrics",
            "inits": len({init for init, _, _ in items}),
        },
    )


# -- regional box analysis -----------------------------------------------------


@dataclass(frozen=True)
class RegionBox:
    """A lat/lon box for area-average analysis (degrees, inclusive)."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    label: str = ""


# Configurable default, not taken from any published definition.
CENTRAL_INDIA_BOX = RegionBox(21.0, 26.0, 74.0, 82.0, label="central_india")


def region_box_mean(frame: FieldFrame, box: RegionBox, weights: LatWeights) -> np.ndarray:
    """Latitude-weighted mean over cells whose centers fall inside the box.

    Row weights are renormalized to mean 1 over the selected rows.
    """
    lat = frame.geometry.lat
    lon = frame.geometry.lon
    rows = np.nonzero((lat >= box.lat_min) & (lat <= box.lat_max))[0]
    cols = np.nonzero((lon >= box.lon_min) & (lon <= box.lon_max))[0]
    if rows.size == 0 or cols.size == 0:
        raise RegionNotCovered(f"box {box.label or box} does not intersect the grid")
    w = weights.w[rows]
    w = w / np.mean(w)
    sub = frame.values[:, rows[:, None], cols[None, :]]
    return np.mean(w[None, :, None] * sub, axis=(1, 2))


@dataclass(frozen=True)
class EventSeries:
    """Aligned daily box-mean series for a forecast and its reference."""

    dates: tuple[dt.datetime, ...]
    variables: tuple[str, ...]
    forecast: np.ndarray  # (n_days, V)
    reference: np.ndarray  # (n_days, V)
    box: RegionBox

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["date", "variable", "forecast", "reference"])
        for d, day in enumerate(self.dates):
            for v, var in enumerate(self.variables):
                writer.writerow(
                    [
                        day.strftime("%Y-%m-%dT%H:%M:%SZ"),
                        var,
                        repr(float(self.forecast[d, v])),
                        repr(float(self.reference[d, v])),
                    ]
                )
        return buf.getvalue()


def event_series(
    trajectory: Trajectory,
    manifest: DatasetManifest,
    box: RegionBox,
    start: dt.datetime,
    end: dt.datetime,
    hour: int = 12,
) -> EventSeries:
    """Daily box means at a fixed hour for a trajectory and the reference.

    The trajectory must span every requested day; the value at the
    initialization time itself is the (truth) initial state.
    """
    day = start.replace(hour=hour, minute=0, second=0, microsecond=0)
    if day < start:
        day += dt.timedelta(days=1)
    step = dt.timedelta(hours=STEP_HOURS)
    dates, fc_rows, ref_rows = [], [], []
    weights = latitude_weights(manifest.geometry)
    while day <= end:
        offset = day - trajectory.init_time
        lead, rem = divmod(offset, step)
        if rem or lead < 0 or lead > trajectory.leads:
            raise MissingFrame(f"trajectory does not cover {day.isoformat()}")
        frame = manifest.read_at(day) if lead == 0 else trajectory.at_lead(lead)
        truth = manifest.read_at(day)
        dates.append(day)
        fc_rows.append(region_box_mean(frame, box, weights))
        ref_rows.append(region_box_mean(truth, box, weights))
        day += dt.timedelta(days=1)
    if not dates:
        raise MissingFrame("event window contains no sampled days")
    return EventSeries(
        tuple(dates),
        manifest.catalog.names,
        np.stack(fc_rows),
        np.stack(ref_rows),
        box,
    )

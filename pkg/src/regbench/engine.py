"""Autoregressive increment-based rollout and the deterministic objective.

A forecaster ("adapter") maps a history window of states plus assembled
auxiliary inputs to a predicted increment; the engine adds the increment to
the current state and feeds the result back until the target lead time.
Adapters may live in-process (the builtins here) or behind the wire
protocol (:class:`regbench.wire.ExternalAdapter`); both expose::

    increment(history: list[FieldFrame], aux: list[FieldFrame]) -> ndarray

with ``history_len`` giving the number of extra past states required.
Increments are exchanged in physical units; any normalization is the
adapter's private concern.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .baselines import ClimatologyTable
from .conditioning import (
    MODE_BOUNDARY,
    MODE_COARSE,
    BoundarySpec,
    apply_boundary_forcing,
    bilinear_upsample,
    crop_to_region,
)
from .dataset import DatasetManifest
from .errors import AdapterError, InvalidConfig, NonFiniteForecast, ShapeError
from .grid import STEP_HOURS, FieldFrame, LatWeights, weighted_area_mean

_STEP = dt.timedelta(hours=STEP_HOURS)


@dataclass(frozen=True)
class Trajectory:
    """Forecast frames at leads 1..K from one initialization."""

    init_time: dt.datetime
    frames: tuple[FieldFrame, ...]
    conditioning: str

    def __post_init__(self):
        for k, frame in enumerate(self.frames, start=1):
            expected = self.init_time + k * _STEP
            if frame.timestamp != expected:
                raise ShapeError(
                    f"lead {k} frame stamped {frame.timestamp}, expected {expected}"
                )

    @property
    def leads(self) -> int:
        return len(self.frames)

    def at_lead(self, k: int) -> FieldFrame:
        if not 1 <= k <= len(self.frames):
            raise ShapeError(f"lead {k} outside 1..{len(self.frames)}")
        return self.frames[k - 1]


def step(adapter, history: list[FieldFrame], aux: list[FieldFrame]) -> FieldFrame:
    """One forecast step: X(t + 6 h) = X(t) + predicted increment."""
    current = history[-1]
    try:
        increment = adapter.increment(history, aux)
    except AdapterError:
        raise
    except Exception as exc:
        raise AdapterError(f"adapter raised {type(exc).__name__}: {exc}") from exc
    increment = np.asarray(increment, dtype=np.float64)
    if increment.shape != current.shape:
        raise ShapeError(
            f"adapter increment shape {increment.shape} != state shape {current.shape}"
        )
    if not np.all(np.isfinite(increment)):
        raise NonFiniteForecast("adapter returned a non-finite increment")
    return FieldFrame(
        current.timestamp + _STEP,
        current.values + increment,
        current.catalog,
        current.geometry,
    )


def _coarse_aux(
    coarse_manifest: DatasetManifest, when: dt.datetime, target_frame: FieldFrame
) -> FieldFrame:
    coarse = coarse_manifest.read_at(when)
    cropped = crop_to_region(coarse, target_frame.geometry)
    return bilinear_upsample(cropped, target_frame.geometry)


def rollout(
    adapter,
    manifest: DatasetManifest,
    init_time: dt.datetime,
    leads: int,
    spec: BoundarySpec,
    coarse_manifest: DatasetManifest | None = None,
) -> Trajectory:
    """Run ``leads`` autoregressive steps from truth at ``init_time``.

    Under boundary forcing every produced state has its halo ring
    overwritten with truth at its own valid time before being stored and
    fed onward. Under coarse conditioning each step receives the cropped,
    upsampled coarse truth at the time being predicted from.
    """
    if leads < 1:
        raise InvalidConfig("rollout needs at least one lead")
    spec.validate_for(manifest.geometry)
    if spec.mode == MODE_COARSE and coarse_manifest is None:
        raise InvalidConfig("coarse conditioning requires a coarse manifest")
    h = getattr(adapter, "history_len", 0)
    history = [
        manifest.read_at(init_time - j * _STEP) for j in range(h, -1, -1)
    ]
    frames = []
    for k in range(1, leads + 1):
        if spec.mode == MODE_COARSE:
            aux = [_coarse_aux(coarse_manifest, f.timestamp, f) for f in history]
        else:
            aux = []
        try:
            state = step(adapter, history, aux)
        except AdapterError as exc:
            raise AdapterError(str(exc), step_index=k) from exc
        if spec.mode == MODE_BOUNDARY and spec.halo_width > 0:
            truth = manifest.read_at(state.timestamp)
            state = apply_boundary_forcing(state, truth, spec.halo_width)
        frames.append(state)
        history = (history + [state])[-(h + 1) :]
    return Trajectory(init_time, tuple(frames), spec.mode)


def deterministic_loss(
    pred_increment: np.ndarray, true_increment: np.ndarray, weights: LatWeights
) -> float:
    """Latitude-weighted MSE between predicted and true increments.

    (1/(V*H*W)) * sum_v,i,j w[i] * (pred - true)^2, the deterministic
    training objective.
    """
    pred = np.asarray(pred_increment, dtype=np.float64)
    true = np.asarray(true_increment, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 3:
        raise ShapeError(f"increment shapes differ: {pred.shape} vs {true.shape}")
    sq = np.square(pred - true)
    return float(np.mean([weighted_area_mean(sq[v], weights) for v in range(sq.shape[0])]))


# -- built-in adapters --------------------------------------------------------


class PersistenceAdapter:
    """Zero increment: the forecast repeats the current state."""

    history_len = 0

    def increment(self, history, aux):
        return np.zeros_like(history[-1].values)


class ClimatologyIncrementAdapter:
    """Increment that lands exactly on the climatology of the next step."""

    history_len = 0

    def __init__(self, table: ClimatologyTable):
        self.table = table

    def increment(self, history, aux):
        current = history[-1]
        target = self.table.mean_frame(current.timestamp + _STEP)
        return target - current.values


class LinearDecayAdapter:
    """Relax toward the current climatology: increment = -alpha * anomaly."""

    history_len = 0

    def __init__(self, table: ClimatologyTable, alpha: float):
        if not 0.0 <= alpha <= 1.0:
            raise InvalidConfig("decay rate alpha must be in [0, 1]")
        self.table = table
        self.alpha = alpha

    def increment(self, history, aux):
        current = history[-1]
        clim = self.table.mean_frame(current.timestamp)
        return -self.alpha * (current.values - clim)


class OracleAdapter:
    """Returns the true increment, so forecasts recover truth exactly."""

    history_len = 0

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest

    def increment(self, history, aux):
        current = history[-1]
        truth_next = self.manifest.read_at(current.timestamp + _STEP)
        return truth_next.values - current.values


BUILTIN_ADAPTERS = ("persistence", "climatology_increment", "linear_decay", "oracle")


def serve_builtin(
    name: str,
    climatology: ClimatologyTable | None = None,
    manifest: DatasetManifest | None = None,
    alpha: float = 0.1,
):
    """Construct a built-in deterministic adapter by name."""
    if name == "persistence":
        return PersistenceAdapter()
    if name == "climatology_increment":
        if climatology is None:
            raise InvalidConfig("climatology_increment adapter needs a climatology table")
        return ClimatologyIncrementAdapter(climatology)
    if name == "linear_decay":
        if climatology is None:
            raise InvalidConfig("linear_decay adapter needs a climatology table")
        return LinearDecayAdapter(climatology, alpha)
    if name == "oracle":
        if manifest is None:
            raise InvalidConfig("oracle adapter needs the truth manifest")
        return OracleAdapter(manifest)
    raise InvalidConfig(f"unknown builtin adapter {name!r}; choose from {BUILTIN_ADAPTERS}")

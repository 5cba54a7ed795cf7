"""Auxiliary-input construction: boundary forcing and coarse conditioning.

Two strategies are supported. Boundary forcing overwrites a halo ring of
grid cells with truth so external dynamics enter the limited domain; the
stored 256x256-style grid contains the halo, and the region of interest is
the interior (H-2w)x(W-2w). Coarse conditioning crops a low-resolution
frame to the regional extent, bilinearly upsamples it in physical lat/lon
coordinates, and concatenates it along the channel axis.

All functions are pure over immutable frames and safe to call per timestep
in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CatalogMismatch, InvalidConfig, RegionNotCovered, ShapeError
from .grid import Channel, FieldFrame, GridGeometry, VariableCatalog

MODE_BOUNDARY = "boundary_forcing"
MODE_COARSE = "coarse_conditioning"
DEFAULT_HALO_WIDTH = 10


@dataclass(frozen=True)
class BoundarySpec:
    """Which conditioning strategy a run uses, and its parameters."""

    mode: str
    halo_width: int = DEFAULT_HALO_WIDTH
    coarse_manifest_path: str | None = None
    allow_full_overwrite: bool = False

    def __post_init__(self):
        if self.mode not in (MODE_BOUNDARY, MODE_COARSE):
            raise InvalidConfig(f"unknown conditioning mode {self.mode!r}")
        if self.mode == MODE_BOUNDARY and self.halo_width < 0:
            raise InvalidConfig("halo_width must be non-negative")

    def validate_for(self, geometry: GridGeometry) -> None:
        if self.mode == MODE_BOUNDARY and not self.allow_full_overwrite:
            h, w = geometry.shape
            if 2 * self.halo_width >= min(h, w):
                raise InvalidConfig(
                    f"halo width {self.halo_width} covers the whole {h}x{w} grid"
                )


def apply_boundary_forcing(
    state: FieldFrame, truth: FieldFrame, halo_width: int
) -> FieldFrame:
    """Truth on the outer ring of width halo_width, state strictly inside.

    Idempotent for a fixed truth; the interior is bit-identical to state.
    """
    if state.catalog != truth.catalog:
        raise CatalogMismatch("state and truth catalogs differ")
    if state.geometry != truth.geometry or state.timestamp != truth.timestamp:
        raise CatalogMismatch("state and truth must share geometry and timestamp")
    if halo_width == 0:
        return state
    _, h, w = state.shape
    if 2 * halo_width >= min(h, w):
        return truth
    out = truth.values.copy()
    k = halo_width
    out[:, k : h - k, k : w - k] = state.values[:, k : h - k, k : w - k]
    return state.with_values(out)


def _ascending(axis: np.ndarray) -> tuple[np.ndarray, bool]:
    if axis.size > 1 and axis[1] < axis[0]:
        return axis[::-1], True
    return axis, False


def _cover_range(axis: np.ndarray, lo: float, hi: float, label: str) -> tuple[int, int]:
    """Smallest index range [i0, i1] whose cells cover [lo, hi].

    Coverage is measured against the cell footprint: each center owns half a
    grid spacing beyond itself at the edges.
    """
    half = (axis[-1] - axis[0]) / (2 * (axis.size - 1)) if axis.size > 1 else np.inf
    if lo < axis[0] - half or hi > axis[-1] + half:
        raise RegionNotCovered(
            f"{label} range [{lo}, {hi}] extends past grid [{axis[0]}, {axis[-1]}]"
        )
    i0 = int(np.searchsorted(axis, lo, side="right")) - 1
    i1 = int(np.searchsorted(axis, hi, side="left"))
    return max(i0, 0), min(i1, axis.size - 1)


def crop_to_region(global_frame: FieldFrame, region: GridGeometry) -> FieldFrame:
    """Smallest sub-grid of a global frame whose extent covers the region."""
    glat, flip_lat = _ascending(global_frame.geometry.lat)
    glon, flip_lon = _ascending(global_frame.geometry.lon)
    rlat = region.lat
    rlon = region.lon
    i0, i1 = _cover_range(glat, float(rlat.min()), float(rlat.max()), "latitude")
    j0, j1 = _cover_range(glon, float(rlon.min()), float(rlon.max()), "longitude")
    values = global_frame.values
    if flip_lat:
        values = values[:, ::-1, :]
    if flip_lon:
        values = values[:, :, ::-1]
    geometry = GridGeometry(
        glat[i0 : i1 + 1], glon[j0 : j1 + 1], global_frame.geometry.resolution_deg
    )
    return FieldFrame(
        global_frame.timestamp,
        values[:, i0 : i1 + 1, j0 : j1 + 1],
        global_frame.catalog,
        geometry,
    )


def _axis_weights(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bracketing indices and fractions for 1-D linear interpolation.

    Destination coordinates outside the source hull clamp to the edge.
    """
    x = np.clip(dst, src[0], src[-1])
    idx = np.clip(np.searchsorted(src, x, side="right") - 1, 0, src.size - 2)
    span = src[idx + 1] - src[idx]
    frac = (x - src[idx]) / span
    return idx, frac


def bilinear_upsample(coarse: FieldFrame, target: GridGeometry) -> FieldFrame:
    """Bilinear interpolation in physical lat/lon onto the target grid.

    Exact on constant and affine fields; values never leave the coarse
    field's min/max envelope (the interpolant is a convex combination).
    """
    clat, flip_lat = _ascending(coarse.geometry.lat)
    clon, flip_lon = _ascending(coarse.geometry.lon)
    if clat.size < 2 or clon.size < 2:
        raise InvalidConfig("coarse grid must be at least 2x2 for interpolation")
    values = coarse.values
    if flip_lat:
        values = values[:, ::-1, :]
    if flip_lon:
        values = values[:, :, ::-1]
    ti, tf = _axis_weights(clat, target.lat)
    tj, uf = _axis_weights(clon, target.lon)
    tf = tf[None, :, None]
    uf = uf[None, None, :]
    f00 = values[:, ti[:, None], tj[None, :]]
    f10 = values[:, ti[:, None] + 1, tj[None, :]]
    f01 = values[:, ti[:, None], tj[None, :] + 1]
    f11 = values[:, ti[:, None] + 1, tj[None, :] + 1]
    # incremental form: exact on constant fields (all deltas vanish)
    out = f00 + tf * (f10 - f00) + uf * (f01 - f00) + tf * uf * (f11 - f10 - f01 + f00)
    return FieldFrame(coarse.timestamp, out, coarse.catalog, target)


COARSE_PREFIX = "coarse:"


def concat_conditioning(regional: FieldFrame, upsampled_coarse: FieldFrame) -> FieldFrame:
    """Stack (regional, coarse-derived) along channels into a 2V frame.

    Channels [0, V) are regional; [V, 2V) carry a "coarse:" name prefix.
    """
    if regional.geometry != upsampled_coarse.geometry:
        raise ShapeError("regional and coarse frames are on different grids")
    if regional.catalog.names != upsampled_coarse.catalog.names:
        raise CatalogMismatch("regional and coarse catalogs differ")
    if regional.timestamp != upsampled_coarse.timestamp:
        raise ShapeError("regional and coarse frames have different timestamps")
    coarse_channels = tuple(
        Channel(COARSE_PREFIX + c.name, c.level, c.units)
        for c in upsampled_coarse.catalog.channels
    )
    catalog = VariableCatalog(regional.catalog.channels + coarse_channels)
    stacked = np.concatenate([regional.values, upsampled_coarse.values], axis=0)
    return FieldFrame(regional.timestamp, stacked, catalog, regional.geometry)


def split_conditioning(stacked: FieldFrame) -> tuple[FieldFrame, FieldFrame]:
    """Inverse of :func:`concat_conditioning`."""
    n = len(stacked.catalog)
    if n % 2:
        raise ShapeError("stacked frame must have an even channel count")
    v = n // 2
    front = stacked.catalog.channels[:v]
    back = stacked.catalog.channels[v:]
    for a, b in zip(front, back):
        if b.name != COARSE_PREFIX + a.name:
            raise CatalogMismatch("second half is not the coarse copy of the first")
    bare = VariableCatalog(tuple(Channel(c.name[len(COARSE_PREFIX):], c.level, c.units) for c in back))
    regional = FieldFrame(
        stacked.timestamp, stacked.values[:v], VariableCatalog(front), stacked.geometry
    )
    coarse = FieldFrame(stacked.timestamp, stacked.values[v:], bare, stacked.geometry)
    return regional, coarse

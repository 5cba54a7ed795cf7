import numpy as np
import pytest
from hypothesis import given, strategies as st

from regbench.conditioning import (
    BoundarySpec,
    apply_boundary_forcing,
    bilinear_upsample,
    concat_conditioning,
    crop_to_region,
    split_conditioning,
)
from regbench.dataset import block_mean, coarse_geometry
from regbench.errors import (
    CatalogMismatch,
    InvalidConfig,
    RegionNotCovered,
    ShapeError,
)
from regbench.grid import Channel, FieldFrame, GridGeometry, VariableCatalog

from .conftest import ts

CAT1 = VariableCatalog((Channel("t2m", None, "K"),))


def frame_on(lat, lon, values, when=ts(2019, 1, 1)):
    geometry = GridGeometry(lat, lon, float(lat[1] - lat[0]) if len(lat) > 1 else 1.0)
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[None]
    return FieldFrame(when, values, CAT1, geometry)


class TestBoundaryForcing:
    def grid4(self, state_val, truth_val):
        lat = [10.0, 11, 12, 13]
        lon = [70.0, 71, 72, 73]
        state = frame_on(lat, lon, np.full((4, 4), float(state_val)))
        truth = frame_on(lat, lon, np.full((4, 4), float(truth_val)))
        return state, truth

    def test_zero_halo_is_identity(self):
        state, truth = self.grid4(0, 1)
        assert apply_boundary_forcing(state, truth, 0) is state

    def test_halo_covering_grid_returns_truth(self):
        state, truth = self.grid4(0, 1)
        out = apply_boundary_forcing(state, truth, 2)
        assert np.all(out.values == 1.0)

    def test_4x4_halo1_enumeration(self):
        state, truth = self.grid4(0, 1)
        out = apply_boundary_forcing(state, truth, 1).values[0]
        assert out.sum() == 12.0  # 12 ring cells forced to 1
        assert np.all(out[1:3, 1:3] == 0.0)
        assert np.all(out[0, :] == 1.0) and np.all(out[-1, :] == 1.0)
        assert np.all(out[:, 0] == 1.0) and np.all(out[:, -1] == 1.0)

    def test_idempotent(self, make_frame):
        state = make_frame()
        truth = make_frame(np.ones((3, 4, 3)))
        once = apply_boundary_forcing(state, truth, 1)
        twice = apply_boundary_forcing(once, truth, 1)
        assert np.array_equal(once.values, twice.values)

    def test_interior_bit_identical(self, make_frame):
        state = make_frame()
        truth = make_frame(np.ones((3, 4, 3)) * 7)
        out = apply_boundary_forcing(state, truth, 1)
        assert np.array_equal(out.values[:, 1:3, 1:2], state.values[:, 1:3, 1:2])

    def test_catalog_mismatch(self, make_frame):
        state = make_frame()
        other = FieldFrame(
            state.timestamp,
            state.values[:1],
            CAT1,
            state.geometry,
        )
        with pytest.raises(CatalogMismatch):
            apply_boundary_forcing(state, other, 1)

    def test_spec_validates_halo(self):
        spec = BoundarySpec(mode="boundary_forcing", halo_width=2)
        with pytest.raises(InvalidConfig):
            spec.validate_for(GridGeometry([1.0, 2, 3, 4], [1.0, 2, 3, 4], 1.0))


class TestCropToRegion:
    def coarse_frame(self):
        lat = np.linspace(0.0, 30.0, 16)
        lon = np.linspace(60.0, 90.0, 16)
        values = np.arange(256.0).reshape(1, 16, 16)
        return frame_on(lat, lon, values)

    def test_identity_crop(self):
        frame = self.coarse_frame()
        out = crop_to_region(frame, frame.geometry)
        assert np.array_equal(out.values, frame.values)

    def test_interior_region_brackets_by_one_cell(self):
        frame = self.coarse_frame()
        region = GridGeometry(np.linspace(10.0, 20.0, 32), np.linspace(70.0, 80.0, 32), 0.3)
        out = crop_to_region(frame, region)
        assert out.geometry.lat[0] <= 10.0 and out.geometry.lat[-1] >= 20.0
        spacing = 2.0
        assert out.geometry.lat[0] > 10.0 - spacing - 1e-9
        assert out.geometry.lat[-1] < 20.0 + spacing + 1e-9

    def test_region_outside_rejected(self):
        frame = self.coarse_frame()
        region = GridGeometry([40.0, 41.0], [70.0, 71.0], 1.0)
        with pytest.raises(RegionNotCovered):
            crop_to_region(frame, region)

    def test_descending_latitude_axis(self):
        lat = np.linspace(30.0, 0.0, 16)  # descending, as some archives store it
        lon = np.linspace(60.0, 90.0, 16)
        values = np.arange(256.0).reshape(1, 16, 16)
        frame = frame_on(lat, lon, values)
        region = GridGeometry([10.0, 20.0], [70.0, 80.0], 10.0)
        out = crop_to_region(frame, region)
        assert np.all(np.diff(out.geometry.lat) > 0)


class TestBilinearUpsample:
    def test_constant_reproduced(self):
        coarse = frame_on([0.0, 10.0], [0.0, 10.0], np.full((2, 2), 3.5))
        target = GridGeometry(np.linspace(0, 10, 7), np.linspace(0, 10, 5), 1.0)
        out = bilinear_upsample(coarse, target)
        assert np.all(out.values == 3.5)

    def test_affine_exact(self):
        lat = np.linspace(0.0, 12.0, 4)
        lon = np.linspace(50.0, 62.0, 5)
        a, b = 0.7, -1.3
        values = a * lat[:, None] + b * lon[None, :]
        coarse = frame_on(lat, lon, values)
        target = GridGeometry(np.linspace(0.0, 12.0, 17), np.linspace(50.0, 62.0, 13), 1.0)
        out = bilinear_upsample(coarse, target)
        expected = a * target.lat[:, None] + b * target.lon[None, :]
        np.testing.assert_allclose(out.values[0], expected, rtol=0, atol=1e-12)

    def test_unit_square_center(self):
        coarse = frame_on([0.0, 1.0], [0.0, 1.0], [[0.0, 1.0], [2.0, 3.0]])
        target = GridGeometry([0.5], [0.5], 1.0)
        assert bilinear_upsample(coarse, target).values[0, 0, 0] == 1.5

    def test_too_small_coarse_grid(self):
        coarse = frame_on([0.0], [0.0, 1.0], [[1.0, 2.0]])
        with pytest.raises(InvalidConfig):
            bilinear_upsample(coarse, GridGeometry([0.5], [0.5], 1.0))

    def test_edge_clamping(self):
        coarse = frame_on([0.0, 1.0], [0.0, 1.0], [[0.0, 1.0], [2.0, 3.0]])
        target = GridGeometry([-0.25, 1.25], [0.0, 1.0], 1.0)
        out = bilinear_upsample(coarse, target)
        np.testing.assert_array_equal(out.values[0], [[0.0, 1.0], [2.0, 3.0]])

    @given(seed=st.integers(0, 200))
    def test_no_overshoot_under_downsample(self, seed):
        rng = np.random.default_rng(seed)
        lat = np.linspace(0.0, 6.0, 4)
        lon = np.linspace(0.0, 6.0, 4)
        values = rng.normal(size=(4, 4))
        coarse = frame_on(lat, lon, values)
        target = GridGeometry(np.linspace(0.0, 6.0, 8), np.linspace(0.0, 6.0, 8), 1.0)
        up = bilinear_upsample(coarse, target)
        down = block_mean(up.values, 2)
        assert down.max() <= values.max() + 1e-12
        assert down.min() >= values.min() - 1e-12

    def test_exact_at_coinciding_nodes(self):
        lat = np.linspace(0.0, 8.0, 5)
        lon = np.linspace(0.0, 8.0, 5)
        rng = np.random.default_rng(1)
        fine_vals = rng.normal(size=(5, 5))
        fine = frame_on(lat, lon, fine_vals)
        up = bilinear_upsample(fine, GridGeometry(np.linspace(0, 8, 9), np.linspace(0, 8, 9), 1.0))
        cropped = crop_to_region(up, fine.geometry)
        at_nodes = bilinear_upsample(cropped, fine.geometry)
        np.testing.assert_allclose(at_nodes.values, fine_vals[None], rtol=0, atol=1e-12)


class TestConcatConditioning:
    def test_channel_ordering_contract(self, make_frame):
        regional = make_frame()
        coarse = make_frame(regional.values * 2)
        stacked = concat_conditioning(regional, coarse)
        assert len(stacked.catalog) == 6
        assert stacked.catalog.names[3] == "coarse:t2m"
        assert stacked.catalog.names[4] == "coarse:" + regional.catalog.names[1]
        np.testing.assert_array_equal(stacked.values[:3], regional.values)
        np.testing.assert_array_equal(stacked.values[3:], coarse.values)

    def test_concat_split_round_trip(self, make_frame):
        frame = make_frame()
        stacked = concat_conditioning(frame, frame)
        a, b = split_conditioning(stacked)
        assert np.array_equal(a.values, frame.values)
        assert np.array_equal(b.values, frame.values)
        assert a.catalog == frame.catalog

    def test_mismatched_grid_rejected(self, make_frame):
        regional = make_frame()
        other = frame_on([1.0, 2, 3], [1.0, 2, 3], np.zeros((3, 3)))
        with pytest.raises(ShapeError):
            concat_conditioning(regional, other)


class TestCoarseGeometryCoverage:
    def test_companion_grid_usable_for_conditioning(self, synth_manifest):
        # the coarse grid's cell centers sit inside the fine extent by half
        # a block; footprint coverage must still accept the fine region
        manifest, _ = synth_manifest
        frame = manifest.read(manifest.frames("train")[0])
        cg = coarse_geometry(manifest.geometry, 2)
        coarse = FieldFrame(frame.timestamp, block_mean(frame.values, 2), frame.catalog, cg)
        cropped = crop_to_region(coarse, manifest.geometry)
        up = bilinear_upsample(cropped, manifest.geometry)
        assert up.values.shape == frame.values.shape

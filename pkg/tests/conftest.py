import datetime as dt

import numpy as np
import pytest

from regbench.dataset import SyntheticConfig, generate_synthetic_dataset
from regbench.grid import Channel, FieldFrame, GridGeometry, VariableCatalog


def ts(year, month, day, hour=0):
    return dt.datetime(year, month, day, hour, tzinfo=dt.timezone.utc)


@pytest.fixture
def geometry():
    return GridGeometry(lat=[10.0, 12.0, 14.0, 16.0], lon=[70.0, 72.0, 74.0], resolution_deg=2.0)


@pytest.fixture
def catalog():
    return VariableCatalog(
        (
            Channel("t2m", None, "K"),
            Channel("u10", None, "m s-1"),
            Channel("z500", 500, "m"),
        )
    )


@pytest.fixture
def make_frame(geometry, catalog):
    def build(values=None, when=ts(2019, 5, 25, 12)):
        if values is None:
            rng = np.random.default_rng(0)
            values = rng.normal(size=(len(catalog), *geometry.shape))
        return FieldFrame(when, values, catalog, geometry)

    return build


@pytest.fixture(scope="session")
def synth_manifest(tmp_path_factory):
    """Three synthetic years (train/val/test) on a small noisy grid."""
    config = SyntheticConfig(
        seed=7, n_channels=2, height=8, width=8, start_year=2001, years=3,
        noise_amplitude=0.3,
    )
    out = tmp_path_factory.mktemp("synth")
    return generate_synthetic_dataset(config, out), config

#!/usr/bin/env python3
"""Regenerate the golden wire-protocol fixtures consumed by both components.

The byte files freeze the engine's encoding of one message of each
interesting type; expected.json carries the decoded values so the adapter's
tests can assert element equality without re-deriving them.
"""

import datetime as dt
import json
from pathlib import Path

import numpy as np

from regbench.grid import Channel, VariableCatalog
from regbench.wire import (
    DenoiseRequest,
    DenoiseResponse,
    HandshakeRequest,
    StepRequest,
    StepResponse,
    encode_wire,
)

OUT = Path(__file__).resolve().parent.parent / "adapter" / "fixtures"

CATALOG = VariableCatalog((Channel("t2m", None, "K"), Channel("z500", 500, "m")))
WHEN = dt.datetime(2019, 5, 25, 12, tzinfo=dt.timezone.utc)


def history_array():
    v, h, w = 2, 3, 2
    idx = np.indices((v, h, w)).astype(np.float64)
    return (idx[0] * 100 + idx[1] * 10 + idx[2]) * 0.5


def aux_array():
    v, h, w = 2, 3, 2
    idx = np.indices((v, h, w)).astype(np.float64)
    return -(idx[0] * 10 + idx[1] + idx[2]) * 0.25


def noisy_array():
    return np.array([[[0.5, -1.25], [3.0, 8.0]]])


def gaussian_denoise(x, sigma, mu=2.0, s=1.0):
    return (x * s**2 + mu * sigma**2) / (s**2 + sigma**2)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    hist = history_array()
    aux = aux_array()
    noisy = noisy_array()
    sigma = 2.5

    fixtures = {
        "handshake_request.bin": encode_wire(
            HandshakeRequest(CATALOG, (10.0, 12.0, 14.0), (70.0, 72.0), 0, "boundary_forcing")
        ),
        "step_request.bin": encode_wire(StepRequest(WHEN, (hist,), (aux,))),
        "step_response.bin": encode_wire(StepResponse(np.zeros_like(hist))),
        "denoise_request.bin": encode_wire(DenoiseRequest(sigma, noisy)),
        "denoise_response.bin": encode_wire(DenoiseResponse(gaussian_denoise(noisy, sigma))),
    }
    for name, data in fixtures.items():
        (OUT / name).write_bytes(data)

    expected = {
        "timestamp_epoch_s": int(WHEN.timestamp()),
        "shape": [2, 3, 2],
        "history_values": hist.ravel().tolist(),
        "aux_values": aux.ravel().tolist(),
        "denoise_sigma": sigma,
        "noisy_values": noisy.ravel().tolist(),
        "denoised_values": gaussian_denoise(noisy, sigma).ravel().tolist(),
        "handshake": {
            "catalog": [
                {"name": c.name, "level": c.level, "units": c.units} for c in CATALOG.channels
            ],
            "lat": [10.0, 12.0, 14.0],
            "lon": [70.0, 72.0],
            "history": 0,
            "conditioning": "boundary_forcing",
        },
    }
    (OUT / "expected.json").write_text(json.dumps(expected, indent=1), encoding="utf-8")
    print(f"wrote {len(fixtures) + 1} fixture files to {OUT}")


if __name__ == "__main__":
    main()

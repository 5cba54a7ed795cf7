"""Cross-language protocol tests against the TypeScript reference adapter.

These drive the engine through the external adapter process (node) and
assert bit-exact agreement with the in-process implementations, plus the
golden byte fixtures shared by both components. Each prints a PASS/FAIL
line like the acceptance module; run with ``-s`` to see them.
"""

import json
import math
import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from regbench.conditioning import BoundarySpec
from regbench.edm import (
    GaussianAnalyticDenoiser,
    NoiseSchedule,
    member_seed,
    sample_dpmpp2s,
    sample_heun,
)
from regbench.engine import PersistenceAdapter, rollout
from regbench.errors import AdapterError
from regbench.grid import Channel, GridGeometry, VariableCatalog
from regbench.wire import (
    DenoiseRequest,
    DenoiseResponse,
    ExternalAdapter,
    ExternalDenoiser,
    HandshakeRequest,
    StepRequest,
    StepResponse,
    SubprocessTransport,
    decode_wire,
    encode_wire,
)

from .conftest import ts

REPO = Path(__file__).resolve().parent.parent
ADAPTER_MAIN = REPO / "adapter" / "dist" / "main.js"
FIXTURES = REPO / "adapter" / "fixtures"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not ADAPTER_MAIN.exists(),
    reason="node or the built adapter (adapter/dist/main.js) is unavailable",
)


def report(name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f" ({detail})"
    print(line)
    assert ok, line


def adapter_command(model):
    return ["node", str(ADAPTER_MAIN), "serve", "--model", model, "--transport", "stdio"]


def fixture_messages():
    catalog = VariableCatalog((Channel("t2m", None, "K"), Channel("z500", 500, "m")))
    when = ts(2019, 5, 25, 12)
    idx = np.indices((2, 3, 2)).astype(np.float64)
    hist = (idx[0] * 100 + idx[1] * 10 + idx[2]) * 0.5
    aux = -(idx[0] * 10 + idx[1] + idx[2]) * 0.25
    noisy = np.array([[[0.5, -1.25], [3.0, 8.0]]])
    sigma = 2.5
    denoised = (noisy + 2.0 * sigma**2) / (1.0 + sigma**2)
    return {
        "handshake_request.bin": HandshakeRequest(
            catalog, (10.0, 12.0, 14.0), (70.0, 72.0), 0, "boundary_forcing"
        ),
        "step_request.bin": StepRequest(when, (hist,), (aux,)),
        "step_response.bin": StepResponse(np.zeros_like(hist)),
        "denoise_request.bin": DenoiseRequest(sigma, noisy),
        "denoise_response.bin": DenoiseResponse(denoised),
    }


class TestGoldenFixtures:
    def test_engine_encoding_matches_fixture_bytes(self):
        mismatches = []
        for name, message in fixture_messages().items():
            if encode_wire(message) != (FIXTURES / name).read_bytes():
                mismatches.append(name)
        report(
            "golden fixtures: engine encoding reproduces committed bytes",
            not mismatches,
            f"checked {len(fixture_messages())} files",
        )

    def test_fixture_bytes_decode_to_expected_values(self):
        expected = json.loads((FIXTURES / "expected.json").read_text())
        req = decode_wire((FIXTURES / "step_request.bin").read_bytes())
        ok = (
            isinstance(req, StepRequest)
            and int(req.timestamp.timestamp()) == expected["timestamp_epoch_s"]
            and req.history[0].ravel().tolist() == expected["history_values"]
            and req.aux[0].ravel().tolist() == expected["aux_values"]
        )
        report("golden fixtures: engine decodes fixture bytes to published values", ok)

    def test_adapter_reencodes_step_request_identically(self):
        # round trip through the node codec and back: decode + re-encode
        script = (
            "const {decodeMessage, encodeMessage} = await import(%r);"
            "const fs = await import('node:fs');"
            "const bytes = fs.readFileSync(%r);"
            "const out = encodeMessage(decodeMessage(bytes));"
            "process.stdout.write(out);"
        ) % (str(ADAPTER_MAIN.parent / "wire.js"), str(FIXTURES / "step_request.bin"))
        proc = subprocess.run(
            ["node", "--input-type=module", "-e", script], capture_output=True, timeout=60
        )
        assert proc.returncode == 0, proc.stderr.decode()
        ok = proc.stdout == (FIXTURES / "step_request.bin").read_bytes()
        report("golden fixtures: adapter re-encodes engine bytes identically", ok)


class TestCrossLanguageRollout:
    def test_external_persistence_matches_in_process_bit_exact(self, synth_manifest):
        manifest, _ = synth_manifest
        spec = BoundarySpec(mode="boundary_forcing", halo_width=1)
        init = ts(2003, 6, 1, 0)
        local = rollout(PersistenceAdapter(), manifest, init, 5, spec)
        transport = SubprocessTransport(adapter_command("persistence"))
        adapter = ExternalAdapter(
            transport, manifest.catalog, manifest.geometry, 0, "boundary_forcing", timeout=60
        )
        try:
            remote = rollout(adapter, manifest, init, 5, spec)
        finally:
            adapter.close()
        ok = all(
            np.array_equal(remote.at_lead(k).values, local.at_lead(k).values)
            for k in range(1, 6)
        )
        report("cross-language rollout: external persistence bit-exact vs in-process", ok)

    def test_external_failure_reaches_engine_with_step_index(self, synth_manifest):
        manifest, _ = synth_manifest
        spec = BoundarySpec(mode="boundary_forcing", halo_width=0)
        transport = SubprocessTransport(adapter_command("fail-at:2"))
        adapter = ExternalAdapter(
            transport, manifest.catalog, manifest.geometry, 0, "boundary_forcing", timeout=60
        )
        try:
            with pytest.raises(AdapterError) as err:
                rollout(adapter, manifest, ts(2003, 6, 1, 0), 4, spec)
        finally:
            adapter.close()
        report(
            "cross-language error path: scripted failure surfaces at step 2",
            err.value.step_index == 2,
            str(err.value),
        )

    def test_clean_shutdown(self):
        catalog = VariableCatalog((Channel("x", None, "u"),))
        geometry = GridGeometry([10.0], [70.0], 1.0)
        transport = SubprocessTransport(adapter_command("persistence"))
        adapter = ExternalAdapter(transport, catalog, geometry, 0, "none", timeout=60)
        adapter.close()
        report(
            "cross-language shutdown: adapter exits 0 on Shutdown",
            transport.proc.returncode == 0,
        )


class TestCrossLanguageDenoiser:
    CATALOG = VariableCatalog((Channel("x", None, "u"),))
    GEOMETRY = GridGeometry([10.0, 12.0], [70.0, 72.0], 2.0)

    def open_remote(self):
        transport = SubprocessTransport(adapter_command("gaussian-denoiser:2,1"))
        return ExternalDenoiser(transport, self.CATALOG, self.GEOMETRY, timeout=60)

    def test_wire_sampling_bit_exact_vs_local(self):
        schedule = NoiseSchedule(num_levels=40, noise_inflation=1.0, ensemble_size=1)
        local_den = GaussianAnalyticDenoiser(2.0, 1.0)
        remote = self.open_remote()
        try:
            equal = True
            for m in range(50):
                a = sample_heun(local_den, (1, 2, 2), schedule, member_seed(31, m))
                b = sample_heun(remote, (1, 2, 2), schedule, member_seed(31, m))
                equal &= bool(np.array_equal(a, b))
        finally:
            remote.close()
        report(
            "cross-language denoiser: wire samples bit-exact vs in-process (50 draws)",
            equal,
        )

    @pytest.mark.parametrize(
        "name,sampler", [("heun", sample_heun), ("dpmpp2s", sample_dpmpp2s)]
    )
    def test_gaussian_acceptance_over_the_wire(self, name, sampler):
        """The analytic-denoiser moment oracle, end to end over the wire.

        2,000 samples of a (1, 2, 2) field; elements are iid, so moments
        pool across the 8,000 values: mean within 4 SE of 2, std within
        5% of 1 (the acceptance tolerances).
        """
        schedule = NoiseSchedule(num_levels=40, noise_inflation=1.0)
        remote = self.open_remote()
        started = time.monotonic()
        try:
            samples = np.stack(
                [sampler(remote, (1, 2, 2), schedule, member_seed(555, m)) for m in range(2000)]
            )
        finally:
            remote.close()
        elapsed = time.monotonic() - started
        pooled = samples.ravel()
        se = pooled.std(ddof=1) / math.sqrt(pooled.size)
        z = abs(pooled.mean() - 2.0) / se
        std_err = abs(pooled.std(ddof=1) - 1.0)
        report(
            f"cross-language Gaussian acceptance over the wire ({name})",
            z <= 4.0 and std_err <= 0.05,
            f"|z|={z:.2f}, |std-1|={std_err:.4f}, {elapsed:.1f}s",
        )

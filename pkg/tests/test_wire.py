import struct
import subprocess
import sys
import time

import numpy as np
import pytest

from regbench.conditioning import BoundarySpec
from regbench.edm import GaussianAnalyticDenoiser, NoiseSchedule, sample_heun
from regbench.engine import PersistenceAdapter, rollout
from regbench.errors import AdapterError, ProtocolError
from regbench.grid import Channel, GridGeometry, VariableCatalog
from regbench.wire import (
    DenoiseRequest,
    DenoiseResponse,
    ErrorReport,
    ExternalAdapter,
    ExternalDenoiser,
    HandshakeAck,
    HandshakeRequest,
    Shutdown,
    StepRequest,
    StepResponse,
    SubprocessTransport,
    TcpTransport,
    decode_wire,
    encode_wire,
)

from .conftest import ts

CATALOG = VariableCatalog((Channel("t2m", None, "K"), Channel("u10", None, "m s-1")))
GEOMETRY = GridGeometry([10.0, 12.0, 14.0], [70.0, 72.0], 2.0)


def sample_messages():
    rng = np.random.default_rng(5)
    arr = rng.normal(size=(2, 3, 2))
    return [
        HandshakeRequest(CATALOG, (10.0, 12.0, 14.0), (70.0, 72.0), 0, "boundary_forcing"),
        HandshakeAck(True, "", 0, "boundary_forcing"),
        HandshakeAck(False, "wrong grid"),
        StepRequest(ts(2019, 5, 25, 12), (arr,), (arr * 2,)),
        StepResponse(arr),
        ErrorReport("ShapeError", "bad shape", step_index=3),
        ErrorReport("ProtocolError", "oops"),
        Shutdown(),
        DenoiseRequest(1.25, arr),
        DenoiseResponse(arr),
    ]


class TestCodec:
    @pytest.mark.parametrize("idx", range(10))
    def test_round_trip(self, idx):
        msg = sample_messages()[idx]
        back = decode_wire(encode_wire(msg))
        assert type(back) is type(msg)
        for name in msg.__dataclass_fields__:
            a, b = getattr(msg, name), getattr(back, name)
            if isinstance(a, tuple) and a and isinstance(a[0], np.ndarray):
                assert all(np.array_equal(x, y) for x, y in zip(a, b))
            elif isinstance(a, np.ndarray):
                assert np.array_equal(a, b)
            else:
                assert a == b

    def test_round_trip_preserves_bytes(self):
        msg = sample_messages()[3]
        frame = encode_wire(msg)
        assert encode_wire(decode_wire(frame)) == frame

    def test_truncated_step_response(self):
        frame = encode_wire(sample_messages()[4])
        with pytest.raises(ProtocolError):
            decode_wire(frame[:-7])

    def test_unknown_type_byte(self):
        frame = bytearray(encode_wire(Shutdown()))
        frame[4] = 99
        with pytest.raises(ProtocolError):
            decode_wire(bytes(frame))

    def test_oversized_length_rejected(self):
        frame = struct.pack("<I", (1 << 30) + 2) + b"\x06"
        with pytest.raises(ProtocolError):
            decode_wire(frame)

    def test_trailing_garbage_rejected(self):
        frame = encode_wire(sample_messages()[4]) + b"xx"
        with pytest.raises(ProtocolError):
            decode_wire(frame)


def host_command(model):
    return [sys.executable, "-m", "regbench.adapter_host", "--model", model, "--transport", "stdio"]


class TestSubprocessAdapter:
    def test_persistence_over_stdio_matches_in_process(self, synth_manifest):
        manifest, _ = synth_manifest
        spec = BoundarySpec(mode="boundary_forcing", halo_width=1)
        init = ts(2003, 6, 1, 0)

        local = rollout(PersistenceAdapter(), manifest, init, 3, spec)
        transport = SubprocessTransport(host_command("persistence"))
        remote_adapter = ExternalAdapter(
            transport, manifest.catalog, manifest.geometry, 0, "boundary_forcing", timeout=30
        )
        try:
            remote = rollout(remote_adapter, manifest, init, 3, spec)
        finally:
            remote_adapter.close()
        for k in range(1, 4):
            assert np.array_equal(remote.at_lead(k).values, local.at_lead(k).values)

    def test_failure_surfaces_as_adapter_error(self, synth_manifest):
        manifest, _ = synth_manifest
        spec = BoundarySpec(mode="boundary_forcing", halo_width=0)
        transport = SubprocessTransport(host_command("fail-at:2"))
        adapter = ExternalAdapter(
            transport, manifest.catalog, manifest.geometry, 0, "boundary_forcing", timeout=30
        )
        try:
            with pytest.raises(AdapterError) as err:
                rollout(adapter, manifest, ts(2003, 6, 1, 0), 4, spec)
            assert err.value.step_index == 2
        finally:
            adapter.close()

    def test_clean_shutdown_exit_code(self):
        transport = SubprocessTransport(host_command("persistence"))
        adapter = ExternalAdapter(transport, CATALOG, GEOMETRY, 0, "none", timeout=30)
        adapter.close()
        assert transport.proc.returncode == 0

    def test_gaussian_denoiser_over_stdio_bit_exact(self):
        schedule = NoiseSchedule(num_levels=6, ensemble_size=1)
        local = GaussianAnalyticDenoiser(2.0, 1.0)
        transport = SubprocessTransport(host_command("gaussian-denoiser:2,1"))
        remote = ExternalDenoiser(transport, CATALOG, GEOMETRY, timeout=30)
        try:
            a = sample_heun(local, (2, 3, 2), schedule, rng_seed=99)
            b = sample_heun(remote, (2, 3, 2), schedule, rng_seed=99)
        finally:
            remote.close()
        assert np.array_equal(a, b)


class TestTcpAdapter:
    def test_persistence_over_tcp(self, synth_manifest):
        manifest, _ = synth_manifest
        port = 39471
        proc = subprocess.Popen(
            [
                sys.executable, "-m", "regbench.adapter_host",
                "--model", "persistence", "--transport", f"tcp:{port}",
            ],
            stderr=subprocess.PIPE,
        )
        try:
            assert b"listening" in proc.stderr.readline()
            transport = None
            for _ in range(50):
                try:
                    transport = TcpTransport("127.0.0.1", port, connect_timeout=5)
                    break
                except OSError:
                    time.sleep(0.1)
            assert transport is not None
            adapter = ExternalAdapter(
                transport, manifest.catalog, manifest.geometry, 0, "boundary_forcing", timeout=30
            )
            spec = BoundarySpec(mode="boundary_forcing", halo_width=0)
            remote = rollout(adapter, manifest, ts(2003, 6, 1, 0), 2, spec)
            local = rollout(PersistenceAdapter(), manifest, ts(2003, 6, 1, 0), 2, spec)
            assert np.array_equal(remote.at_lead(2).values, local.at_lead(2).values)
            adapter.close()
        finally:
            proc.terminate()
            proc.wait(timeout=10)


class TestTimeouts:
    def test_unresponsive_peer_times_out(self):
        import socket
        import threading

        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.bind(("127.0.0.1", 0))
        server.listen(1)
        port = server.getsockname()[1]
        held = []

        def hold():
            conn, _ = server.accept()
            held.append(conn)  # accept, read nothing, answer nothing

        thread = threading.Thread(target=hold, daemon=True)
        thread.start()
        try:
            with pytest.raises((AdapterError, ProtocolError)):
                transport = TcpTransport("127.0.0.1", port, connect_timeout=5)
                ExternalAdapter(transport, CATALOG, GEOMETRY, 0, "none", timeout=0.5)
        finally:
            server.close()
            for conn in held:
                conn.close()

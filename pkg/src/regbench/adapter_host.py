"""Serve built-in forecasters and denoisers over the wire protocol.

This is the in-package counterpart of an external model process: it answers
one handshake, then alternates request/response until Shutdown. Callback
exceptions become ErrorReport messages and the loop continues; malformed
frames get an ErrorReport with code ProtocolError. Usage::

    python -m regbench.adapter_host --model persistence --transport stdio
    python -m regbench.adapter_host --model gaussian-denoiser:2,1 --transport tcp:9500
"""

from __future__ import annotations

import argparse
import socket
import struct
import sys

import numpy as np

from .edm import ConstantDenoiser, GaussianAnalyticDenoiser
from .errors import ProtocolError, RegbenchError
from .wire import (
    MAX_MESSAGE_BYTES,
    DenoiseRequest,
    DenoiseResponse,
    ErrorReport,
    HandshakeAck,
    HandshakeRequest,
    Shutdown,
    StepRequest,
    StepResponse,
    decode_wire,
    encode_wire,
)


class AdapterSession:
    """One connection's state machine: handshake, then steps or denoises."""

    def __init__(self, step_fn=None, denoise_fn=None):
        self.step_fn = step_fn
        self.denoise_fn = denoise_fn
        self.shape = None
        self.step_count = 0

    def respond(self, message):
        """Reply for one decoded message; None means stop serving."""
        if isinstance(message, Shutdown):
            return None
        if isinstance(message, HandshakeRequest):
            self.shape = (len(message.catalog), len(message.lat), len(message.lon))
            return HandshakeAck(
                True, "", message.history_len, message.conditioning
            )
        if self.shape is None:
            return ErrorReport("ProtocolError", "message before handshake")
        if isinstance(message, StepRequest):
            self.step_count += 1
            if self.step_fn is None:
                return ErrorReport("ProtocolError", "this host serves only denoising")
            for arr in (*message.history, *message.aux):
                if arr.shape != self.shape:
                    return ErrorReport(
                        "ShapeError",
                        f"array shape {arr.shape} differs from handshake {self.shape}",
                        step_index=self.step_count,
                    )
            try:
                inc = self.step_fn(message.timestamp, message.history, message.aux)
            except Exception as exc:
                return ErrorReport(
                    type(exc).__name__, str(exc), step_index=self.step_count
                )
            return StepResponse(np.asarray(inc, dtype=np.float64))
        if isinstance(message, DenoiseRequest):
            if self.denoise_fn is None:
                return ErrorReport("ProtocolError", "this host serves only forecasting")
            try:
                out = self.denoise_fn(message.noisy, message.sigma)
            except Exception as exc:
                return ErrorReport(type(exc).__name__, str(exc))
            return DenoiseResponse(np.asarray(out, dtype=np.float64))
        return ErrorReport("ProtocolError", f"unexpected {type(message).__name__}")


def _read_exact(stream, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def serve_stream(session: AdapterSession, rstream, wstream) -> None:
    """Blocking serve loop over byte streams (stdio pipes or socket files)."""
    while True:
        header = _read_exact(rstream, 4)
        if header is None:
            return
        (length,) = struct.unpack("<I", header)
        if length < 1 or length > MAX_MESSAGE_BYTES:
            wstream.write(encode_wire(ErrorReport("ProtocolError", f"bad length {length}")))
            wstream.flush()
            return
        body = _read_exact(rstream, length)
        if body is None:
            return
        try:
            message = decode_wire(header + body)
        except ProtocolError as exc:
            wstream.write(encode_wire(ErrorReport("ProtocolError", str(exc))))
            wstream.flush()
            continue
        reply = session.respond(message)
        if reply is None:
            return
        wstream.write(encode_wire(reply))
        wstream.flush()


def _persistence_step(timestamp, history, aux):
    return np.zeros_like(history[-1])


def _fail_after(n: int):
    state = {"count": 0}

    def step(timestamp, history, aux):
        state["count"] += 1
        if state["count"] >= n:
            raise RuntimeError(f"scripted failure at step {n}")
        return np.zeros_like(history[-1])

    return step


def build_session(model: str) -> AdapterSession:
    if model == "persistence":
        return AdapterSession(step_fn=_persistence_step)
    if model.startswith("fail-at:"):
        return AdapterSession(step_fn=_fail_after(int(model.split(":", 1)[1])))
    if model.startswith("gaussian-denoiser:"):
        mu, s = (float(p) for p in model.split(":", 1)[1].split(","))
        denoiser = GaussianAnalyticDenoiser(mu, s)
        return AdapterSession(denoise_fn=lambda x, sigma: denoiser(x, sigma))
    if model.startswith("constant-denoiser:"):
        denoiser = ConstantDenoiser(float(model.split(":", 1)[1]))
        return AdapterSession(denoise_fn=lambda x, sigma: denoiser(x, sigma))
    raise RegbenchError(f"unknown hosted model {model!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="serve a model over the wire protocol")
    parser.add_argument("--model", required=True)
    parser.add_argument("--transport", default="stdio", help="stdio or tcp:PORT")
    args = parser.parse_args(argv)

    if args.transport == "stdio":
        session = build_session(args.model)
        serve_stream(session, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    if args.transport.startswith("tcp:"):
        port = int(args.transport.split(":", 1)[1])
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind(("127.0.0.1", port))
        server.listen(1)
        print(f"listening on 127.0.0.1:{port}", file=sys.stderr, flush=True)
        while True:
            conn, _ = server.accept()
            with conn:
                rfile = conn.makefile("rb")
                wfile = conn.makefile("wb")
                serve_stream(build_session(args.model), rfile, wfile)
            break
        server.close()
        return 0
    print(f"unknown transport {args.transport!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())

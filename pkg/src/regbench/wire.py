"""Length-prefixed binary protocol for external forecasters and denoisers.

Framing: a 4-byte little-endian unsigned length, one type byte, then the
payload; the length counts the type byte plus the payload. Message types:

    1 handshake-request   JSON: catalog, lat, lon, history, conditioning
    2 handshake-ack       JSON: ok, error, history, conditioning
    3 step-request        i64 timestamp, u32 n_history, u32 n_aux, arrays
    4 step-response       one array (the predicted increment)
    5 error-report        JSON: code, message, optional step_index
    6 shutdown            empty
    7 denoise-request     f64 sigma, one array (the noisy increment)
    8 denoise-response    one array

Arrays are u32 V, u32 H, u32 W followed by V*H*W float64 values,
little-endian, channel-major row-major (the RBF1 element encoding). One
step request is in flight per connection; responses arrive in order.

Under boundary forcing the history frames sent to an adapter already carry
the truth ring; under coarse conditioning the aux list carries the cropped
and upsampled coarse truth. Adapters never assemble conditioning themselves.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
import select
import socket
import struct
import subprocess
import time

import numpy as np

from .errors import AdapterError, ProtocolError
from .frameio import epoch_seconds, from_epoch_seconds
from .grid import Channel, GridGeometry, VariableCatalog

MAX_MESSAGE_BYTES = 1 << 30
DEFAULT_TIMEOUT_S = 120.0

T_HANDSHAKE_REQ = 1
T_HANDSHAKE_ACK = 2
T_STEP_REQ = 3
T_STEP_RESP = 4
T_ERROR = 5
T_SHUTDOWN = 6
T_DENOISE_REQ = 7
T_DENOISE_RESP = 8


@dataclasses.dataclass(frozen=True)
class HandshakeRequest:
    catalog: VariableCatalog
    lat: tuple[float, ...]
    lon: tuple[float, ...]
    history_len: int
    conditioning: str


@dataclasses.dataclass(frozen=True)
class HandshakeAck:
    ok: bool
    error: str = ""
    history_len: int = 0
    conditioning: str = ""


@dataclasses.dataclass(frozen=True)
class StepRequest:
    timestamp: dt.datetime
    history: tuple[np.ndarray, ...]
    aux: tuple[np.ndarray, ...]


@dataclasses.dataclass(frozen=True)
class StepResponse:
    increment: np.ndarray


@dataclasses.dataclass(frozen=True)
class ErrorReport:
    code: str
    message: str
    step_index: int | None = None


@dataclasses.dataclass(frozen=True)
class Shutdown:
    pass


@dataclasses.dataclass(frozen=True)
class DenoiseRequest:
    sigma: float
    noisy: np.ndarray


@dataclasses.dataclass(frozen=True)
class DenoiseResponse:
    denoised: np.ndarray


WireMessage = (
    HandshakeRequest
    | HandshakeAck
    | StepRequest
    | StepResponse
    | ErrorReport
    | Shutdown
    | DenoiseRequest
    | DenoiseResponse
)


def _encode_array(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    if a.ndim != 3:
        raise ProtocolError(f"wire arrays must be (V, H, W), got shape {a.shape}")
    v, h, w = a.shape
    return struct.pack("<III", v, h, w) + a.tobytes()


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ProtocolError("truncated message payload")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self) -> np.ndarray:
        v, h, w = self.unpack("<III")
        if v * h * w * 8 > MAX_MESSAGE_BYTES:
            raise ProtocolError(f"array shape ({v}, {h}, {w}) exceeds message limit")
        raw = self.take(v * h * w * 8)
        return np.frombuffer(raw, dtype="<f8").reshape(v, h, w).copy()

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ProtocolError(f"{len(self.data) - self.pos} trailing bytes in message")


def _json_payload(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode("utf-8")


def encode_wire(message: WireMessage) -> bytes:
    """Serialize a message to a complete wire frame (length, type, payload)."""
    if isinstance(message, HandshakeRequest):
        mtype, payload = T_HANDSHAKE_REQ, _json_payload(
            {
                "catalog": [
                    {"name": c.name, "level": c.level, "units": c.units}
                    for c in message.catalog.channels
                ],
                "lat": list(message.lat),
                "lon": list(message.lon),
                "history": message.history_len,
                "conditioning": message.conditioning,
            }
        )
    elif isinstance(message, HandshakeAck):
        mtype, payload = T_HANDSHAKE_ACK, _json_payload(
            {
                "ok": message.ok,
                "error": message.error,
                "history": message.history_len,
                "conditioning": message.conditioning,
            }
        )
    elif isinstance(message, StepRequest):
        parts = [
            struct.pack(
                "<qII", epoch_seconds(message.timestamp), len(message.history), len(message.aux)
            )
        ]
        parts += [_encode_array(a) for a in message.history]
        parts += [_encode_array(a) for a in message.aux]
        mtype, payload = T_STEP_REQ, b"".join(parts)
    elif isinstance(message, StepResponse):
        mtype, payload = T_STEP_RESP, _encode_array(message.increment)
    elif isinstance(message, ErrorReport):
        doc = {"code": message.code, "message": message.message}
        if message.step_index is not None:
            doc["step_index"] = message.step_index
        mtype, payload = T_ERROR, _json_payload(doc)
    elif isinstance(message, Shutdown):
        mtype, payload = T_SHUTDOWN, b""
    elif isinstance(message, DenoiseRequest):
        mtype, payload = T_DENOISE_REQ, struct.pack("<d", message.sigma) + _encode_array(
            message.noisy
        )
    elif isinstance(message, DenoiseResponse):
        mtype, payload = T_DENOISE_RESP, _encode_array(message.denoised)
    else:
        raise ProtocolError(f"cannot encode {type(message).__name__}")
    if 1 + len(payload) > MAX_MESSAGE_BYTES:
        raise ProtocolError("message exceeds 1 GiB limit")
    return struct.pack("<I", 1 + len(payload)) + bytes([mtype]) + payload


def decode_wire(frame: bytes) -> WireMessage:
    """Parse one complete wire frame back into a message."""
    if len(frame) < 5:
        raise ProtocolError("frame shorter than its fixed header")
    (length,) = struct.unpack("<I", frame[:4])
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"declared length {length} exceeds 1 GiB limit")
    if len(frame) != 4 + length:
        raise ProtocolError(f"frame has {len(frame) - 4} bytes, header declares {length}")
    mtype = frame[4]
    payload = frame[5:]
    if mtype == T_HANDSHAKE_REQ:
        doc = json.loads(payload.decode("utf-8"))
        catalog = VariableCatalog(
            tuple(Channel(c["name"], c["level"], c["units"]) for c in doc["catalog"])
        )
        return HandshakeRequest(
            catalog, tuple(doc["lat"]), tuple(doc["lon"]), doc["history"], doc["conditioning"]
        )
    if mtype == T_HANDSHAKE_ACK:
        doc = json.loads(payload.decode("utf-8"))
        return HandshakeAck(doc["ok"], doc.get("error", ""), doc.get("history", 0), doc.get("conditioning", ""))
    if mtype == T_STEP_REQ:
        c = _Cursor(payload)
        ts, n_hist, n_aux = c.unpack("<qII")
        history = tuple(c.array() for _ in range(n_hist))
        aux = tuple(c.array() for _ in range(n_aux))
        c.done()
        return StepRequest(from_epoch_seconds(ts), history, aux)
    if mtype == T_STEP_RESP:
        c = _Cursor(payload)
        arr = c.array()
        c.done()
        return StepResponse(arr)
    if mtype == T_ERROR:
        doc = json.loads(payload.decode("utf-8"))
        return ErrorReport(doc["code"], doc["message"], doc.get("step_index"))
    if mtype == T_SHUTDOWN:
        if payload:
            raise ProtocolError("shutdown carries no payload")
        return Shutdown()
    if mtype == T_DENOISE_REQ:
        c = _Cursor(payload)
        (sigma,) = c.unpack("<d")
        arr = c.array()
        c.done()
        return DenoiseRequest(sigma, arr)
    if mtype == T_DENOISE_RESP:
        c = _Cursor(payload)
        arr = c.array()
        c.done()
        return DenoiseResponse(arr)
    raise ProtocolError(f"unknown message type byte {mtype}")


# -- transports ---------------------------------------------------------------


class SubprocessTransport:
    """Framed messages over a child process's stdin/stdout."""

    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self._buf = b""

    def send(self, frame: bytes) -> None:
        try:
            self.proc.stdin.write(frame)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise AdapterError(f"adapter process closed its input: {exc}") from exc

    def _read_some(self, deadline: float) -> None:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise AdapterError("timed out waiting for adapter response")
        fd = self.proc.stdout.fileno()
        ready, _, _ = select.select([fd], [], [], remaining)
        if not ready:
            raise AdapterError("timed out waiting for adapter response")
        chunk = self.proc.stdout.read1(1 << 20)
        if not chunk:
            raise AdapterError("adapter process closed its output")
        self._buf += chunk

    def read_exact(self, n: int, deadline: float) -> bytes:
        while len(self._buf) < n:
            self._read_some(deadline)
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class TcpTransport:
    """Framed messages over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout: float = DEFAULT_TIMEOUT_S):
        self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        self._buf = b""

    def send(self, frame: bytes) -> None:
        try:
            self.sock.sendall(frame)
        except OSError as exc:
            raise AdapterError(f"adapter connection failed: {exc}") from exc

    def read_exact(self, n: int, deadline: float) -> bytes:
        while len(self._buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise AdapterError("timed out waiting for adapter response")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(1 << 20)
            except socket.timeout as exc:
                raise AdapterError("timed out waiting for adapter response") from exc
            if not chunk:
                raise AdapterError("adapter closed the connection")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def read_message(transport, timeout: float = DEFAULT_TIMEOUT_S) -> WireMessage:
    deadline = time.monotonic() + timeout
    header = transport.read_exact(4, deadline)
    (length,) = struct.unpack("<I", header)
    if length < 1 or length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"declared message length {length} out of range")
    body = transport.read_exact(length, deadline)
    return decode_wire(header + body)


class ExternalAdapter:
    """Engine-side client for a forecaster served over the wire protocol."""

    def __init__(
        self,
        transport,
        catalog: VariableCatalog,
        geometry: GridGeometry,
        history_len: int = 0,
        conditioning: str = "none",
        timeout: float = DEFAULT_TIMEOUT_S,
    ):
        self.transport = transport
        self.catalog = catalog
        self.geometry = geometry
        self.history_len = history_len
        self.conditioning = conditioning
        self.timeout = timeout
        self.transport.send(
            encode_wire(
                HandshakeRequest(
                    catalog,
                    tuple(geometry.lat.tolist()),
                    tuple(geometry.lon.tolist()),
                    history_len,
                    conditioning,
                )
            )
        )
        ack = read_message(self.transport, timeout)
        if not isinstance(ack, HandshakeAck):
            raise ProtocolError(f"expected handshake ack, got {type(ack).__name__}")
        if not ack.ok:
            raise AdapterError(f"adapter rejected handshake: {ack.error}")

    def increment(self, history, aux) -> np.ndarray:
        request = StepRequest(
            history[-1].timestamp,
            tuple(f.values for f in history),
            tuple(f.values for f in aux),
        )
        self.transport.send(encode_wire(request))
        reply = read_message(self.transport, self.timeout)
        if isinstance(reply, ErrorReport):
            raise AdapterError(f"{reply.code}: {reply.message}", reply.step_index)
        if not isinstance(reply, StepResponse):
            raise ProtocolError(f"expected step response, got {type(reply).__name__}")
        return reply.increment

    def close(self) -> None:
        try:
            self.transport.send(encode_wire(Shutdown()))
        except (AdapterError, OSError):
            pass
        self.transport.close()


class ExternalDenoiser:
    """Engine-side client for a denoiser served over the wire protocol."""

    def __init__(
        self,
        transport,
        catalog: VariableCatalog,
        geometry: GridGeometry,
        timeout: float = DEFAULT_TIMEOUT_S,
    ):
        self.transport = transport
        self.timeout = timeout
        self.transport.send(
            encode_wire(
                HandshakeRequest(
                    catalog,
                    tuple(geometry.lat.tolist()),
                    tuple(geometry.lon.tolist()),
                    0,
                    "denoiser",
                )
            )
        )
        ack = read_message(self.transport, timeout)
        if not isinstance(ack, HandshakeAck) or not ack.ok:
            raise AdapterError("denoiser rejected handshake")

    def __call__(self, noisy: np.ndarray, sigma: float) -> np.ndarray:
        self.transport.send(encode_wire(DenoiseRequest(float(sigma), noisy)))
        reply = read_message(self.transport, self.timeout)
        if isinstance(reply, ErrorReport):
            raise AdapterError(f"{reply.code}: {reply.message}")
        if not isinstance(reply, DenoiseResponse):
            raise ProtocolError(f"expected denoise response, got {type(reply).__name__}")
        return reply.denoised

    def close(self) -> None:
        try:
            self.transport.send(encode_wire(Shutdown()))
        except (AdapterError, OSError):
            pass
        self.transport.close()

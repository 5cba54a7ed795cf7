/**
 * Wire protocol codec: length-prefixed, type-tagged binary messages.
 *
 * Framing: u32 little-endian length (counting the type byte plus payload),
 * one type byte, then the payload. Arrays are u32 V, u32 H, u32 W followed
 * by V*H*W float64 values, little-endian, channel-major row-major. JSON
 * payloads (handshake, error) are UTF-8 with sorted keys.
 */

export const MAX_MESSAGE_BYTES = 1 << 30;

export enum MessageType {
  HandshakeRequest = 1,
  HandshakeAck = 2,
  StepRequest = 3,
  StepResponse = 4,
  ErrorReport = 5,
  Shutdown = 6,
  DenoiseRequest = 7,
  DenoiseResponse = 8,
}

export interface ChannelSpec {
  name: string;
  level: number | null;
  units: string;
}

export interface WireArray {
  v: number;
  h: number;
  w: number;
  /** v*h*w values, channel-major row-major */
  data: Float64Array;
}

export interface HandshakeRequest {
  kind: "handshake_request";
  catalog: ChannelSpec[];
  lat: number[];
  lon: number[];
  history: number;
  conditioning: string;
}

export interface HandshakeAck {
  kind: "handshake_ack";
  ok: boolean;
  error: string;
  history: number;
  conditioning: string;
}

export interface StepRequest {
  kind: "step_request";
  timestampSec: bigint;
  history: WireArray[];
  aux: WireArray[];
}

export interface StepResponse {
  kind: "step_response";
  increment: WireArray;
}

export interface ErrorReport {
  kind: "error_report";
  code: string;
  message: string;
  stepIndex?: number;
}

export interface Shutdown {
  kind: "shutdown";
}

export interface DenoiseRequest {
  kind: "denoise_request";
  sigma: number;
  noisy: WireArray;
}

export interface DenoiseResponse {
  kind: "denoise_response";
  denoised: WireArray;
}

export type WireMessage =
  | HandshakeRequest
  | HandshakeAck
  | StepRequest
  | StepResponse
  | ErrorReport
  | Shutdown
  | DenoiseRequest
  | DenoiseResponse;

export class ProtocolError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolError";
  }
}

export function makeArray(v: number, h: number, w: number, fill = 0): WireArray {
  const data = new Float64Array(v * h * w);
  if (fill !== 0) data.fill(fill);
  return { v, h, w, data };
}

export function sameShape(a: WireArray, b: WireArray): boolean {
  return a.v === b.v && a.h === b.h && a.w === b.w;
}

function encodeArray(a: WireArray): Buffer {
  if (a.data.length !== a.v * a.h * a.w) {
    throw new ProtocolError(
      `array data length ${a.data.length} does not match shape (${a.v}, ${a.h}, ${a.w})`,
    );
  }
  const out = Buffer.alloc(12 + 8 * a.data.length);
  out.writeUInt32LE(a.v, 0);
  out.writeUInt32LE(a.h, 4);
  out.writeUInt32LE(a.w, 8);
  for (let i = 0; i < a.data.length; i++) {
    out.writeDoubleLE(a.data[i], 12 + 8 * i);
  }
  return out;
}

class Cursor {
  pos = 0;

  constructor(private readonly buf: Buffer) {}

  take(n: number): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new ProtocolError("truncated message payload");
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u32(): number {
    return this.take(4).readUInt32LE(0);
  }

  i64(): bigint {
    return this.take(8).readBigInt64LE(0);
  }

  f64(): number {
    return this.take(8).readDoubleLE(0);
  }

  array(): WireArray {
    const v = this.u32();
    const h = this.u32();
    const w = this.u32();
    if (v * h * w * 8 > MAX_MESSAGE_BYTES) {
      throw new ProtocolError(`array shape (${v}, ${h}, ${w}) exceeds message limit`);
    }
    const raw = this.take(v * h * w * 8);
    const data = new Float64Array(v * h * w);
    for (let i = 0; i < data.length; i++) {
      data[i] = raw.readDoubleLE(8 * i);
    }
    return { v, h, w, data };
  }

  done(): void {
    if (this.pos !== this.buf.length) {
      throw new ProtocolError(`${this.buf.length - this.pos} trailing bytes in message`);
    }
  }
}

/** JSON.stringify with recursively sorted keys (matches the engine's output). */
function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}

function frame(type: MessageType, payload: Buffer): Buffer {
  if (1 + payload.length > MAX_MESSAGE_BYTES) {
    throw new ProtocolError("message exceeds 1 GiB limit");
  }
  const head = Buffer.alloc(5);
  head.writeUInt32LE(1 + payload.length, 0);
  head.writeUInt8(type, 4);
  return Buffer.concat([head, payload]);
}

export function encodeMessage(message: WireMessage): Buffer {
  switch (message.kind) {
    case "handshake_request":
      return frame(
        MessageType.HandshakeRequest,
        Buffer.from(
          canonicalJson({
            catalog: message.catalog,
            lat: message.lat,
            lon: message.lon,
            history: message.history,
            conditioning: message.conditioning,
          }),
          "utf-8",
        ),
      );
    case "handshake_ack":
      return frame(
        MessageType.HandshakeAck,
        Buffer.from(
          canonicalJson({
            ok: message.ok,
            error: message.error,
            history: message.history,
            conditioning: message.conditioning,
          }),
          "utf-8",
        ),
      );
    case "step_request": {
      const head = Buffer.alloc(16);
      head.writeBigInt64LE(message.timestampSec, 0);
      head.writeUInt32LE(message.history.length, 8);
      head.writeUInt32LE(message.aux.length, 12);
      return frame(
        MessageType.StepRequest,
        Buffer.concat([head, ...message.history.map(encodeArray), ...message.aux.map(encodeArray)]),
      );
    }
    case "step_response":
      return frame(MessageType.StepResponse, encodeArray(message.increment));
    case "error_report": {
      const doc: Record<string, unknown> = { code: message.code, message: message.message };
      if (message.stepIndex !== undefined) doc.step_index = message.stepIndex;
      return frame(MessageType.ErrorReport, Buffer.from(canonicalJson(doc), "utf-8"));
    }
    case "shutdown":
      return frame(MessageType.Shutdown, Buffer.alloc(0));
    case "denoise_request": {
      const sig = Buffer.alloc(8);
      sig.writeDoubleLE(message.sigma, 0);
      return frame(MessageType.DenoiseRequest, Buffer.concat([sig, encodeArray(message.noisy)]));
    }
    case "denoise_response":
      return frame(MessageType.DenoiseResponse, encodeArray(message.denoised));
  }
}

export function decodeMessage(frameBytes: Buffer): WireMessage {
  if (frameBytes.length < 5) {
    throw new ProtocolError("frame shorter than its fixed header");
  }
  const length = frameBytes.readUInt32LE(0);
  if (length > MAX_MESSAGE_BYTES) {
    throw new ProtocolError(`declared length ${length} exceeds 1 GiB limit`);
  }
  if (frameBytes.length !== 4 + length) {
    throw new ProtocolError(
      `frame has ${frameBytes.length - 4} bytes, header declares ${length}`,
    );
  }
  const type = frameBytes.readUInt8(4);
  const payload = frameBytes.subarray(5);
  switch (type) {
    case MessageType.HandshakeRequest: {
      const doc = JSON.parse(payload.toString("utf-8"));
      return {
        kind: "handshake_request",
        catalog: doc.catalog,
        lat: doc.lat,
        lon: doc.lon,
        history: doc.history,
        conditioning: doc.conditioning,
      };
    }
    case MessageType.HandshakeAck: {
      const doc = JSON.parse(payload.toString("utf-8"));
      return {
        kind: "handshake_ack",
        ok: doc.ok,
        error: doc.error ?? "",
        history: doc.history ?? 0,
        conditioning: doc.conditioning ?? "",
      };
    }
    case MessageType.StepRequest: {
      const c = new Cursor(payload);
      const timestampSec = c.i64();
      const nHistory = c.u32();
      const nAux = c.u32();
      const history: WireArray[] = [];
      for (let i = 0; i < nHistory; i++) history.push(c.array());
      const aux: WireArray[] = [];
      for (let i = 0; i < nAux; i++) aux.push(c.array());
      c.done();
      return { kind: "step_request", timestampSec, history, aux };
    }
    case MessageType.StepResponse: {
      const c = new Cursor(payload);
      const increment = c.array();
      c.done();
      return { kind: "step_response", increment };
    }
    case MessageType.ErrorReport: {
      const doc = JSON.parse(payload.toString("utf-8"));
      return {
        kind: "error_report",
        code: doc.code,
        message: doc.message,
        stepIndex: doc.step_index,
      };
    }
    case MessageType.Shutdown:
      if (payload.length > 0) throw new ProtocolError("shutdown carries no payload");
      return { kind: "shutdown" };
    case MessageType.DenoiseRequest: {
      const c = new Cursor(payload);
      const sigma = c.f64();
      const noisy = c.array();
      c.done();
      return { kind: "denoise_request", sigma, noisy };
    }
    case MessageType.DenoiseResponse: {
      const c = new Cursor(payload);
      const denoised = c.array();
      c.done();
      return { kind: "denoise_response", denoised };
    }
    default:
      throw new ProtocolError(`unknown message type byte ${type}`);
  }
}

/**
 * Incremental frame splitter for byte streams. Feed chunks as they arrive;
 * complete frames (length prefix included) come back in order.
 */
export class FrameReader {
  private buf: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): Buffer[] {
    this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
    const frames: Buffer[] = [];
    for (;;) {
      if (this.buf.length < 4) break;
      const length = this.buf.readUInt32LE(0);
      if (length < 1 || length > MAX_MESSAGE_BYTES) {
        throw new ProtocolError(`declared message length ${length} out of range`);
      }
      if (this.buf.length < 4 + length) break;
      frames.push(this.buf.subarray(0, 4 + length));
      this.buf = this.buf.subarray(4 + length);
    }
    return frames;
  }
}

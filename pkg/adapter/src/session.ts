/**
 * One connection's request/response state machine.
 *
 * The session answers a handshake, then alternates StepRequest/StepResponse
 * (or DenoiseRequest/DenoiseResponse). Model callback exceptions become
 * ErrorReport messages and the session keeps serving; requests whose array
 * shapes differ from the handshake are rejected with a ShapeError report.
 */

import {
  DenoiseRequest,
  ErrorReport,
  HandshakeRequest,
  StepRequest,
  WireArray,
  WireMessage,
  sameShape,
} from "./wire.js";

export type StepFn = (
  timestampSec: bigint,
  history: WireArray[],
  aux: WireArray[],
) => WireArray;

export type DenoiseFn = (noisy: WireArray, sigma: number) => WireArray;

export interface ModelCallbacks {
  step?: StepFn;
  denoise?: DenoiseFn;
}

export class AdapterSession {
  private shape: WireArray | null = null;
  private stepCount = 0;

  constructor(private readonly model: ModelCallbacks) {}

  /** Reply for one message, or null when the peer asked us to shut down. */
  respond(message: WireMessage): WireMessage | null {
    switch (message.kind) {
      case "shutdown":
        return null;
      case "handshake_request":
        return this.handshake(message);
      case "step_request":
        return this.step(message);
      case "denoise_request":
        return this.denoise(message);
      default:
        return errorReport("ProtocolError", `unexpected ${message.kind}`);
    }
  }

  private handshake(message: HandshakeRequest): WireMessage {
    this.shape = {
      v: message.catalog.length,
      h: message.lat.length,
      w: message.lon.length,
      data: new Float64Array(0),
    };
    return {
      kind: "handshake_ack",
      ok: true,
      error: "",
      history: message.history,
      conditioning: message.conditioning,
    };
  }

  private step(message: StepRequest): WireMessage {
    this.stepCount += 1;
    if (this.shape === null) {
      return errorReport("ProtocolError", "step request before handshake");
    }
    if (!this.model.step) {
      return errorReport("ProtocolError", "this adapter serves only denoising");
    }
    for (const arr of [...message.history, ...message.aux]) {
      if (!sameShape(arr, this.shape)) {
        return errorReport(
          "ShapeError",
          `array shape (${arr.v}, ${arr.h}, ${arr.w}) differs from handshake ` +
            `(${this.shape.v}, ${this.shape.h}, ${this.shape.w})`,
          this.stepCount,
        );
      }
    }
    try {
      const increment = this.model.step(message.timestampSec, message.history, message.aux);
      return { kind: "step_response", increment };
    } catch (err) {
      return errorReport(errName(err), errMessage(err), this.stepCount);
    }
  }

  private denoise(message: DenoiseRequest): WireMessage {
    if (this.shape === null) {
      return errorReport("ProtocolError", "denoise request before handshake");
    }
    if (!this.model.denoise) {
      return errorReport("ProtocolError", "this adapter serves only forecasting");
    }
    try {
      const denoised = this.model.denoise(message.noisy, message.sigma);
      return { kind: "denoise_response", denoised };
    } catch (err) {
      return errorReport(errName(err), errMessage(err));
    }
  }
}

function errorReport(code: string, message: string, stepIndex?: number): ErrorReport {
  return { kind: "error_report", code, message, stepIndex };
}

function errName(err: unknown): string {
  return err instanceof Error ? err.name : "Error";
}

function errMessage(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

/**
 * Built-in model callbacks.
 *
 * No numerical kernels live here beyond trivial element maps; all math
 * authority stays engine-side. `custom:<path>#<export>` loads a user module
 * whose export provides { step?, denoise? }.
 */

import { pathToFileURL } from "node:url";

import { ModelCallbacks } from "./session.js";
import { WireArray, makeArray } from "./wire.js";

/** Zero increment: the forecast repeats the current state. */
export function persistence(): ModelCallbacks {
  return {
    step: (_t, history) => {
      const last = history[history.length - 1];
      return makeArray(last.v, last.h, last.w);
    },
  };
}

/**
 * Exact per-element posterior mean for data ~ Normal(mu, s^2):
 * D(x, sigma) = (x * s^2 + mu * sigma^2) / (s^2 + sigma^2).
 */
export function gaussianDenoiser(mu: number, s: number): ModelCallbacks {
  return {
    denoise: (noisy: WireArray, sigma: number): WireArray => {
      const s2 = s * s;
      const sig2 = sigma * sigma;
      const denom = s2 + sig2;
      const data = new Float64Array(noisy.data.length);
      for (let i = 0; i < data.length; i++) {
        data[i] = (noisy.data[i] * s2 + mu * sig2) / denom;
      }
      return { v: noisy.v, h: noisy.h, w: noisy.w, data };
    },
  };
}

export function constantDenoiser(value: number): ModelCallbacks {
  return {
    denoise: (noisy) => {
      const data = new Float64Array(noisy.data.length).fill(value);
      return { v: noisy.v, h: noisy.h, w: noisy.w, data };
    },
  };
}

/** Scripted failure at step N, for exercising the engine's error path. */
export function failAt(n: number): ModelCallbacks {
  let count = 0;
  return {
    step: (_t, history) => {
      count += 1;
      if (count >= n) {
        throw new Error(`scripted failure at step ${n}`);
      }
      const last = history[history.length - 1];
      return makeArray(last.v, last.h, last.w);
    },
  };
}

export async function resolveModel(spec: string): Promise<ModelCallbacks> {
  if (spec === "persistence") return persistence();
  if (spec === "gaussian-denoiser") return gaussianDenoiser(2.0, 1.0);
  if (spec.startsWith("gaussian-denoiser:")) {
    const [mu, s] = spec.slice("gaussian-denoiser:".length).split(",").map(Number);
    if (!Number.isFinite(mu) || !Number.isFinite(s) || s <= 0) {
      throw new Error(`bad gaussian-denoiser parameters in ${spec}`);
    }
    return gaussianDenoiser(mu, s);
  }
  if (spec.startsWith("constant-denoiser:")) {
    return constantDenoiser(Number(spec.slice("constant-denoiser:".length)));
  }
  if (spec.startsWith("fail-at:")) {
    return failAt(Number(spec.slice("fail-at:".length)));
  }
  if (spec.startsWith("custom:")) {
    const ref = spec.slice("custom:".length);
    const [path, exportName = "default"] = ref.split("#");
    const mod = await import(pathToFileURL(path).href);
    const callbacks = mod[exportName];
    if (!callbacks || (!callbacks.step && !callbacks.denoise)) {
      throw new Error(`custom module ${path} export ${exportName} has no step/denoise`);
    }
    return callbacks as ModelCallbacks;
  }
  throw new Error(
    `unknown model ${spec}; use persistence | gaussian-denoiser[:mu,s] | ` +
      `constant-denoiser:c | fail-at:n | custom:path#export`,
  );
}

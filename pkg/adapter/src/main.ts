#!/usr/bin/env node
/**
 * External forecaster/denoiser process speaking the engine's wire protocol.
 *
 *   adapter serve --model persistence --transport stdio
 *   adapter serve --model gaussian-denoiser:2,1 --transport tcp:9500
 *
 * One request is answered at a time; Shutdown ends the session (exit 0).
 * Diagnostics go to stderr; stdout carries only protocol bytes.
 */

import net from "node:net";
import process from "node:process";

import { resolveModel } from "./models.js";
import { AdapterSession, ModelCallbacks } from "./session.js";
import { FrameReader, ProtocolError, decodeMessage, encodeMessage } from "./wire.js";

interface Args {
  model: string;
  transport: string;
}

function parseArgs(argv: string[]): Args {
  if (argv[0] !== "serve") {
    usage();
    process.exit(2);
  }
  const args: Args = { model: "", transport: "stdio" };
  for (let i = 1; i < argv.length; i++) {
    if (argv[i] === "--model" && argv[i + 1]) {
      args.model = argv[++i];
    } else if (argv[i] === "--transport" && argv[i + 1]) {
      args.transport = argv[++i];
    } else {
      console.error(`unknown argument ${argv[i]}`);
      usage();
      process.exit(2);
    }
  }
  if (!args.model) {
    usage();
    process.exit(2);
  }
  return args;
}

function usage(): void {
  console.error(
    "usage: adapter serve --model {persistence|gaussian-denoiser[:mu,s]|" +
      "constant-denoiser:c|fail-at:n|custom:path#export} --transport {stdio|tcp:PORT}",
  );
}

type Writer = (bytes: Buffer) => void;

/** Wire a session to a byte stream; returns a chunk handler. */
function makePump(
  model: ModelCallbacks,
  write: Writer,
  onDone: () => void,
): (chunk: Buffer) => void {
  const session = new AdapterSession(model);
  const reader = new FrameReader();
  return (chunk: Buffer) => {
    let frames: Buffer[];
    try {
      frames = reader.push(chunk);
    } catch (err) {
      write(
        encodeMessage({
          kind: "error_report",
          code: "ProtocolError",
          message: err instanceof Error ? err.message : String(err),
        }),
      );
      onDone();
      return;
    }
    for (const frameBytes of frames) {
      let reply;
      try {
        reply = session.respond(decodeMessage(frameBytes));
      } catch (err) {
        if (err instanceof ProtocolError) {
          write(
            encodeMessage({ kind: "error_report", code: "ProtocolError", message: err.message }),
          );
          continue;
        }
        throw err;
      }
      if (reply === null) {
        onDone();
        return;
      }
      write(encodeMessage(reply));
    }
  };
}

async function serveStdio(model: ModelCallbacks): Promise<void> {
  return new Promise((resolve) => {
    const pump = makePump(
      model,
      (bytes) => process.stdout.write(bytes),
      () => resolve(),
    );
    process.stdin.on("data", pump);
    process.stdin.on("end", () => resolve());
  });
}

async function serveTcp(model: ModelCallbacks, port: number): Promise<void> {
  return new Promise((resolve) => {
    const server = net.createServer((socket) => {
      const pump = makePump(
        model,
        (bytes) => socket.write(bytes),
        () => {
          socket.end();
          server.close(() => resolve());
        },
      );
      socket.on("data", pump);
      socket.on("error", (err) => console.error(`socket error: ${err.message}`));
    });
    server.listen(port, "127.0.0.1", () => {
      console.error(`listening on 127.0.0.1:${port}`);
    });
  });
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const model = await resolveModel(args.model);
  if (args.transport === "stdio") {
    await serveStdio(model);
  } else if (args.transport.startsWith("tcp:")) {
    await serveTcp(model, Number(args.transport.slice(4)));
  } else {
    console.error(`unknown transport ${args.transport}`);
    process.exit(2);
  }
}

main().then(
  () => process.exit(0),
  (err) => {
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(1);
  },
);

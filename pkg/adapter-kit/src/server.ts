/**
 * Protocol v1 server loop over any byte stream pair, plus stdio and TCP
 * front ends. Requests are answered in arrival order (serial handling is
 * the contract's default); a bad line or a failing binding produces an
 * error response and the connection stays up.
 */

import * as net from "node:net";
import * as readline from "node:readline";
import type { Readable, Writable } from "node:stream";

import type { AdapterBinding } from "./binding.js";
import { checkMask } from "./binding.js";
import { asPredictRequest, helloLine, type Response } from "./protocol.js";

export interface ServeOptions {
  input: Readable;
  output: Writable;
  /** Called after a clean {"bye":true}; closes the transport. */
  onDone?: () => void;
}

export async function serve(binding: AdapterBinding, opts: ServeOptions): Promise<void> {
  const write = (resp: Response | string) => {
    const line = typeof resp === "string" ? resp : JSON.stringify(resp);
    opts.output.write(line + "\n");
  };

  write(helloLine(binding.modelName, binding.batchLimit));

  for await (const line of readline.createInterface({ input: opts.input })) {
    if (line.trim() === "") continue;
    let msg: unknown;
    try {
      msg = JSON.parse(line);
    } catch (e) {
      write({ id: null, error: `malformed request line: ${(e as Error).message}` });
      continue;
    }
    if (typeof msg === "object" && msg !== null && (msg as { bye?: unknown }).bye === true) {
      break;
    }
    const req = asPredictRequest(msg);
    if (typeof req === "string") {
      const id = (msg as { id?: unknown }).id;
      write({ id: Number.isInteger(id) ? (id as number) : null, error: req });
      continue;
    }
    try {
      const pixels = Buffer.from(req.pixels, "base64");
      const expected = req.width * req.height * req.channels;
      if (pixels.length !== expected) {
        throw new Error(`pixel payload is ${pixels.length} bytes, expected ${expected}`);
      }
      const mask = await binding.predict(req.height, req.width, req.channels, pixels);
      const bad = checkMask(mask, req.width, req.height);
      if (bad !== null) throw new Error(bad);
      write({ id: req.id, mask: Buffer.from(mask).toString("base64") });
    } catch (e) {
      write({ id: req.id, error: (e as Error).message });
    }
  }
  opts.onDone?.();
}

/** Serve one session over stdin/stdout and resolve when the client leaves. */
export async function serveStdio(binding: AdapterBinding): Promise<void> {
  await serve(binding, {
    input: process.stdin,
    output: process.stdout,
    onDone: () => process.exit(0),
  });
}

/** Listen on 127.0.0.1:port; each connection gets its own session. */
export function serveTcp(binding: AdapterBinding, port: number): net.Server {
  const server = net.createServer((socket) => {
    void serve(binding, {
      input: socket,
      output: socket,
      onDone: () => socket.end(),
    }).catch(() => socket.destroy());
  });
  server.listen(port, "127.0.0.1");
  return server;
}

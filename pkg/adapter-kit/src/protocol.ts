/**
 * Wire protocol v1: UTF-8 JSON objects separated by "\n".
 *
 * The server speaks first with a hello line, then answers each pixel
 * request with a mask (one 0/1 byte per pixel, base64) or an error. The
 * client ends the session with {"bye": true}.
 */

export const PROTOCOL_VERSION = 1;

export interface Hello {
  hello: true;
  protocol: number;
  model: string;
  batch: number;
}

export interface PredictRequest {
  id: number;
  width: number;
  height: number;
  channels: number;
  /** base64 of width*height*channels raw bytes, row-major */
  pixels: string;
}

export interface Response {
  id: number | null;
  /** base64 of width*height bytes, each 0 or 1 */
  mask?: string;
  error?: string;
}

export function helloLine(model: string, batch: number): string {
  const hello: Hello = { hello: true, protocol: PROTOCOL_VERSION, model, batch };
  return JSON.stringify(hello);
}

/** Narrow an arbitrary parsed object to a PredictRequest, or explain why not. */
export function asPredictRequest(msg: unknown): PredictRequest | string {
  if (typeof msg !== "object" || msg === null) return "request is not an object";
  const m = msg as Record<string, unknown>;
  for (const field of ["width", "height", "channels"] as const) {
    if (!Number.isInteger(m[field]) || (m[field] as number) < 1) {
      return `invalid ${field}: ${JSON.stringify(m[field])}`;
    }
  }
  if (!Number.isInteger(m.id)) return `invalid id: ${JSON.stringify(m.id)}`;
  if (typeof m.pixels !== "string") return "missing pixels payload";
  const c = m.channels as number;
  if (c !== 1 && c !== 3) return `channels must be 1 or 3, got ${c}`;
  return m as unknown as PredictRequest;
}

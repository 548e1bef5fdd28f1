/**
 * The one thing a model owner writes: a binding from raw pixels to a
 * binary mask. Deep-model bindings are one-pagers that wrap whatever
 * inference stack hosts the network; the kit handles all framing.
 */

export interface AdapterBinding {
  /** Reported in the hello line; the client records it as model_id. */
  modelName: string;
  /** Advertised read-ahead allowance (>= 1). */
  batchLimit: number;
  /**
   * Segment one image. `pixels` is width*height*channels bytes, row-major.
   * Must return exactly width*height bytes, each 0 or 1, and must be
   * deterministic: equal inputs, equal masks.
   */
  predict(
    height: number,
    width: number,
    channels: number,
    pixels: Uint8Array,
  ): Uint8Array | Promise<Uint8Array>;
}

/** Raised out of the request handler when a binding breaks its contract. */
export function checkMask(mask: Uint8Array, width: number, height: number): string | null {
  if (mask.length !== width * height) {
    return `binding returned ${mask.length} mask bytes, expected ${width * height}`;
  }
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] > 1) return `binding returned mask byte ${mask[i]} at ${i}, expected 0 or 1`;
  }
  return null;
}

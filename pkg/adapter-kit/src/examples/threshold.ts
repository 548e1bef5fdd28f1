/**
 * Example binding: label a pixel foreground when its intensity (channel
 * mean, rounded half up) reaches a threshold. No ML dependencies; exists
 * so protocol conformance can be checked end to end and as the template
 * for real model bindings.
 *
 *   node dist/examples/threshold.js [--name <model>] [--threshold <0..255>]
 *                                   [--batch <n>] [--tcp <port>]
 */

import type { AdapterBinding } from "../binding.js";
import { serveStdio, serveTcp } from "../server.js";

export function thresholdBinding(name: string, t: number, batch: number): AdapterBinding {
  return {
    modelName: name,
    batchLimit: batch,
    predict(height, width, channels, pixels) {
      const mask = new Uint8Array(width * height);
      for (let i = 0; i < mask.length; i++) {
        let intensity: number;
        if (channels === 1) {
          intensity = pixels[i];
        } else {
          const s = pixels[3 * i] + pixels[3 * i + 1] + pixels[3 * i + 2];
          intensity = Math.floor(s / 3 + 0.5);
        }
        mask[i] = intensity >= t ? 1 : 0;
      }
      return mask;
    },
  };
}

function argValue(flag: string): string | undefined {
  const i = process.argv.indexOf(flag);
  return i >= 0 ? process.argv[i + 1] : undefined;
}

const isMain =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;

if (isMain) {
  const name = argValue("--name") ?? "threshold-128";
  const threshold = Number(argValue("--threshold") ?? "128");
  const batch = Number(argValue("--batch") ?? "8");
  const tcp = argValue("--tcp");

  const binding = thresholdBinding(name, threshold, batch);
  if (tcp !== undefined) {
    serveTcp(binding, Number(tcp));
  } else {
    void serveStdio(binding);
  }
}

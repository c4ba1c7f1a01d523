// Client-side frame handling: newest-wins slots (the console never buffers
// more than one pending frame per stream) and RGB8 -> RGBA expansion.

import type { FrameMsg } from "./wire.js";

export class LatestFrame {
  private slot: FrameMsg | null = null;
  received = 0;
  discarded = 0;

  offer(frame: FrameMsg): void {
    this.received += 1;
    if (this.slot !== null) this.discarded += 1;
    this.slot = frame;
  }

  take(): FrameMsg | null {
    const out = this.slot;
    this.slot = null;
    return out;
  }

  peek(): FrameMsg | null {
    return this.slot;
  }
}

/** Expand RGB8 or GRAY8 pixels into an RGBA buffer for ImageData. */
export function toRgba(
  frame: FrameMsg,
  out?: Uint8ClampedArray<ArrayBuffer>,
): Uint8ClampedArray<ArrayBuffer> {
  const n = frame.width * frame.height;
  const rgba = out && out.length === n * 4 ? out : new Uint8ClampedArray(n * 4);
  const px = frame.pixels;
  if (frame.format === 0) {
    for (let i = 0; i < n; i++) {
      rgba[i * 4] = px[i * 3];
      rgba[i * 4 + 1] = px[i * 3 + 1];
      rgba[i * 4 + 2] = px[i * 3 + 2];
      rgba[i * 4 + 3] = 255;
    }
  } else {
    for (let i = 0; i < n; i++) {
      const v = px[i];
      rgba[i * 4] = v;
      rgba[i * 4 + 1] = v;
      rgba[i * 4 + 2] = v;
      rgba[i * 4 + 3] = 255;
    }
  }
  return rgba;
}

/** Count 255-valued pixels of a condition map inside a square window. */
export function edgeCountInWindow(
  data: Uint8Array,
  width: number,
  height: number,
  cx: number,
  cy: number,
  windowPx: number,
): number {
  const half = Math.floor(windowPx / 2);
  const x0 = Math.max(0, Math.floor(cx) - half);
  const x1 = Math.min(width, Math.floor(cx) + half);
  const y0 = Math.max(0, Math.floor(cy) - half);
  const y1 = Math.min(height, Math.floor(cy) + half);
  let count = 0;
  for (let y = y0; y < y1; y++) {
    for (let x = x0; x < x1; x++) {
      if (data[y * width + x] === 255) count++;
    }
  }
  return count;
}

// Client-side result rendering: the original image on a canvas with the
// bounding box and mask contour drawn from the wire payload, plus one
// probability bar per class sorted by confidence.

import { tryDecodeRle } from "./rle.js";
import type { ClassProb, PredictResponse } from "./state.js";

export const OVERLAY_COLOR = "#00ff00";

/** Minimal slice of CanvasRenderingContext2D the overlay needs; tests pass
 * a recording stub. */
export interface Ctx2D {
  drawImage(image: CanvasImageSource, dx: number, dy: number,
            dw: number, dh: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
}

/** Mask pixels with at least one zero 4-neighbor (borders count as zero);
 * mirrors the service-side contour definition. */
export function maskBoundary(mask: Uint8Array, h: number, w: number): number[] {
  const out: number[] = [];
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      if (!mask[r * w + c]) continue;
      const up = r > 0 ? mask[(r - 1) * w + c] : 0;
      const down = r < h - 1 ? mask[(r + 1) * w + c] : 0;
      const left = c > 0 ? mask[r * w + c - 1] : 0;
      const right = c < w - 1 ? mask[r * w + c + 1] : 0;
      if (!(up && down && left && right)) out.push(r * w + c);
    }
  }
  return out;
}

/** Draws image, box and contour; returns the display scale factor used.
 * The canvas is sized to scale * original dims by the caller. */
export function drawOverlay(
  ctx: Ctx2D,
  image: CanvasImageSource,
  response: PredictResponse,
  canvasWidth: number,
  canvasHeight: number,
): number {
  const [h, w] = response.mask.dims;
  const scale = Math.min(canvasWidth / w, canvasHeight / h);
  ctx.drawImage(image, 0, 0, w * scale, h * scale);

  const mask = tryDecodeRle(response.mask.rle, h, w);
  if (mask) {
    ctx.fillStyle = OVERLAY_COLOR;
    for (const idx of maskBoundary(mask, h, w)) {
      const r = Math.floor(idx / w);
      const c = idx % w;
      ctx.fillRect(c * scale, r * scale, Math.max(scale, 1), Math.max(scale, 1));
    }
  }

  const { x, y, w: bw, h: bh } = response.bbox;
  ctx.strokeStyle = OVERLAY_COLOR;
  ctx.lineWidth = 2;
  ctx.strokeRect(x * scale, y * scale, bw * scale, bh * scale);
  return scale;
}

/** One bar per class, sorted by descending probability, labelled with
 * whole percentages. */
export function renderProbabilityBars(
  container: HTMLElement,
  classes: ClassProb[],
): void {
  container.innerHTML = "";
  const sorted = [...classes].sort((a, b) => b.probability - a.probability);
  for (const entry of sorted) {
    const row = container.ownerDocument.createElement("div");
    row.className = "prob-row";

    const label = container.ownerDocument.createElement("span");
    label.className = "prob-label";
    label.textContent = `${entry.label} ${(entry.probability * 100).toFixed(1)}%`;

    const track = container.ownerDocument.createElement("div");
    track.className = "prob-track";
    const fill = container.ownerDocument.createElement("div");
    fill.className = "prob-fill";
    fill.style.width = `${(entry.probability * 100).toFixed(1)}%`;
    track.appendChild(fill);

    row.appendChild(label);
    row.appendChild(track);
    container.appendChild(row);
  }
}

// Canvas helpers: draw the server-produced mask PNG as a half-transparent
// overlay and the active selection rectangle. No mask math happens here.

import type { Rect } from "./api.js";
import { pixelToDisplay } from "./rect.js";

export async function maskBitmapFromPng(pngBytes: Uint8Array): Promise<ImageBitmap> {
  const blob = new Blob([pngBytes.buffer as ArrayBuffer], { type: "image/png" });
  return createImageBitmap(blob);
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  view: ImageBitmap | HTMLImageElement,
  mask: ImageBitmap | null,
  rect: Rect | null,
  zoom: number,
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(view, 0, 0, w, h);
  if (mask) {
    ctx.save();
    ctx.globalAlpha = 0.5;
    // tint the mask cyan: draw it, then multiply a color through it
    ctx.drawImage(mask, 0, 0, w, h);
    ctx.globalCompositeOperation = "source-atop";
    ctx.restore();
  }
  if (rect) {
    const [r0, c0, r1, c1] = rect;
    const a = pixelToDisplay(r0, c0, zoom);
    const b = pixelToDisplay(r1, c1, zoom);
    ctx.save();
    ctx.strokeStyle = "#ffcc00";
    ctx.lineWidth = 2;
    ctx.setLineDash([5, 3]);
    ctx.strokeRect(a.x, a.y, b.x - a.x, b.y - a.y);
    ctx.restore();
  }
}

export function drawSparkline(
  ctx: CanvasRenderingContext2D,
  values: number[],
): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.clearRect(0, 0, w, h);
  if (values.length < 2) return;
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const span = hi - lo || 1;
  ctx.beginPath();
  ctx.strokeStyle = "#4f9dff";
  ctx.lineWidth = 1.5;
  values.forEach((v, i) => {
    const x = (i / (values.length - 1)) * (w - 2) + 1;
    const y = h - 2 - ((v - lo) / span) * (h - 4);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}

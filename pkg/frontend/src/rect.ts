// Rectangle normalization: pointer drags in display coordinates become
// integer pixel rects in image coordinates, independent of zoom.

import type { Rect } from "./api.js";

export interface Point {
  x: number; // display px, horizontal
  y: number; // display px, vertical
}

// display -> image pixel coordinates at a given zoom (display = image * zoom)
export function displayToPixel(p: Point, zoom: number): { row: number; col: number } {
  return { row: p.y / zoom, col: p.x / zoom };
}

export function pixelToDisplay(row: number, col: number, zoom: number): Point {
  return { x: col * zoom, y: row * zoom };
}

/**
 * Normalize a drag into an inclusive-exclusive (row0, col0, row1, col1) rect:
 * snapped to integer pixels, at least 1x1, clamped to the image bounds, and
 * independent of drag direction.
 */
export function normalizeDrag(
  start: Point,
  end: Point,
  zoom: number,
  imageWidth: number,
  imageHeight: number,
): Rect | null {
  const a = displayToPixel(start, zoom);
  const b = displayToPixel(end, zoom);
  let r0 = Math.floor(Math.min(a.row, b.row));
  let c0 = Math.floor(Math.min(a.col, b.col));
  let r1 = Math.ceil(Math.max(a.row, b.row));
  let c1 = Math.ceil(Math.max(a.col, b.col));
  r0 = Math.max(0, Math.min(r0, imageHeight - 1));
  c0 = Math.max(0, Math.min(c0, imageWidth - 1));
  r1 = Math.max(r0 + 1, Math.min(r1, imageHeight));
  c1 = Math.max(c0 + 1, Math.min(c1, imageWidth));
  // a zero-area drag (single click) is ignored by the caller
  if (Math.abs(a.row - b.row) < 1e-9 && Math.abs(a.col - b.col) < 1e-9) {
    return null;
  }
  return [r0, c0, r1, c1];
}

export function rectEquals(a: Rect | null, b: Rect | null): boolean {
  if (a === null || b === null) return a === b;
  return a[0] === b[0] && a[1] === b[1] && a[2] === b[2] && a[3] === b[3];
}

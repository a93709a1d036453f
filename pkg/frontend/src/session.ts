// UI session state: selected view, current rect/alpha, committed maskset,
// active job. Pure state transitions so the invariants are testable without
// a DOM.

import type { Rect } from "./api.js";

export interface UiSession {
  serverBase: string;
  view: number;
  rect: Rect | null;
  alpha: number;
  masksetId: string | null;
  jobId: string | null;
}

export function newSession(serverBase: string): UiSession {
  return { serverBase, view: 0, rect: null, alpha: 0.85, masksetId: null, jobId: null };
}

export function setAlpha(s: UiSession, alpha: number): UiSession {
  if (!(alpha > -1.0 && alpha <= 1.0)) {
    throw new Error(`alpha must be in (-1, 1], got ${alpha}`);
  }
  return { ...s, alpha };
}

export function setRect(s: UiSession, rect: Rect | null): UiSession {
  if (rect !== null) {
    const [r0, c0, r1, c1] = rect;
    if (!(r0 >= 0 && c0 >= 0 && r1 > r0 && c1 > c0)) {
      throw new Error(`rect ${rect} is not normalized`);
    }
  }
  return { ...s, rect };
}

export function selectView(s: UiSession, view: number): UiSession {
  // the patch selection (rect provenance) survives view switches: the mask
  // preview for another view still derives from the original selection
  return { ...s, view };
}

export function committed(s: UiSession, masksetId: string): UiSession {
  return { ...s, masksetId };
}

export function jobStarted(s: UiSession, jobId: string): UiSession {
  return { ...s, jobId };
}

export function canLaunch(s: UiSession): boolean {
  return s.masksetId !== null && s.jobId === null;
}

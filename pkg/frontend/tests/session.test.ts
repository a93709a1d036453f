import { describe, expect, it } from "vitest";
import * as s from "../src/session.js";

describe("UiSession", () => {
  it("starts with defaults and no launchable job", () => {
    const st = s.newSession("http://x");
    expect(st.alpha).toBe(0.85);
    expect(st.rect).toBeNull();
    expect(s.canLaunch(st)).toBe(false);
  });

  it("rejects alpha outside (-1, 1]", () => {
    const st = s.newSession("");
    expect(() => s.setAlpha(st, -1.0)).toThrow();
    expect(() => s.setAlpha(st, 1.2)).toThrow();
    expect(s.setAlpha(st, 1.0).alpha).toBe(1.0);
  });

  it("rejects non-normalized rects", () => {
    const st = s.newSession("");
    expect(() => s.setRect(st, [4, 4, 4, 8])).toThrow();
    expect(() => s.setRect(st, [-1, 0, 4, 8])).toThrow();
    expect(s.setRect(st, [1, 2, 3, 4]).rect).toEqual([1, 2, 3, 4]);
  });

  it("keeps the selection when switching views", () => {
    let st = s.setRect(s.newSession(""), [1, 2, 3, 4]);
    st = s.selectView(st, 5);
    expect(st.view).toBe(5);
    expect(st.rect).toEqual([1, 2, 3, 4]);
  });

  it("launch requires a committed maskset and no active job", () => {
    let st = s.newSession("");
    st = s.committed(st, "ms1");
    expect(s.canLaunch(st)).toBe(true);
    st = s.jobStarted(st, "j1");
    expect(s.canLaunch(st)).toBe(false);
  });
});

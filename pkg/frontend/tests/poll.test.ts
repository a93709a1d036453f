import { describe, expect, it } from "vitest";
import type { JobStatus } from "../src/api.js";
import { isTerminal, pollJob } from "../src/poll.js";

const status = (step: number, phase: JobStatus["phase"], error = ""): JobStatus => ({
  job_id: "j1", phase, step, losses: {}, preview_view: 0, error,
});

const instant = () => Promise.resolve();

describe("pollJob", () => {
  it("polls until done and reports every update", async () => {
    const seq = [status(0, "repaint"), status(50, "repaint"), status(100, "done")];
    const seen: number[] = [];
    const final = await pollJob(
      () => Promise.resolve(seq.shift() as JobStatus),
      { onUpdate: (s) => seen.push(s.step), sleep: instant },
    );
    expect(final.phase).toBe("done");
    expect(seen).toEqual([0, 50, 100]);
  });

  it("stops polling in terminal states", async () => {
    let calls = 0;
    const final = await pollJob(() => {
      calls += 1;
      return Promise.resolve(status(10, "done"));
    }, { sleep: instant });
    expect(final.step).toBe(10);
    expect(calls).toBe(1);
  });

  it("rejects with the server error on failure", async () => {
    await expect(
      pollJob(() => Promise.resolve(status(3, "failed", "non-finite gradient")),
              { sleep: instant }),
    ).rejects.toThrow("non-finite gradient");
  });

  it("rejects if the step counter decreases", async () => {
    const seq = [status(10, "repaint"), status(5, "repaint")];
    await expect(
      pollJob(() => Promise.resolve(seq.shift() as JobStatus), { sleep: instant }),
    ).rejects.toThrow("step went backwards");
  });
});

describe("isTerminal", () => {
  it("only done/failed are terminal", () => {
    expect(isTerminal("done")).toBe(true);
    expect(isTerminal("failed")).toBe(true);
    expect(isTerminal("repaint")).toBe(false);
    expect(isTerminal("pretrain")).toBe(false);
  });
});

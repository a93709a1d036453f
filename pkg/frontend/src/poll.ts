// Job polling: 1 Hz by default, stops on terminal phases, and enforces the
// server's monotone-step invariant client-side.

import type { JobStatus } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  onUpdate?: (s: JobStatus) => void;
  /** injectable timer for tests */
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export function isTerminal(phase: JobStatus["phase"]): boolean {
  return phase === "done" || phase === "failed";
}

/**
 * Poll until the job reaches a terminal phase. Resolves with the final
 * status for "done", rejects with the server error for "failed", and rejects
 * if the step counter ever decreases.
 */
export async function pollJob(
  getStatus: () => Promise<JobStatus>,
  opts: PollOptions = {},
): Promise<JobStatus> {
  const interval = opts.intervalMs ?? 1000;
  const sleep = opts.sleep ?? defaultSleep;
  let lastStep = -1;
  for (;;) {
    const status = await getStatus();
    if (status.step < lastStep) {
      throw new Error(
        `job step went backwards: ${lastStep} -> ${status.step}`,
      );
    }
    lastStep = status.step;
    opts.onUpdate?.(status);
    if (status.phase === "done") return status;
    if (status.phase === "failed") {
      throw new Error(status.error || "job failed");
    }
    await sleep(interval);
  }
}

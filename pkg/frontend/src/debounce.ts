// Latest-wins async scheduling for the alpha slider: at most one request in
// flight, trailing-edge debounce, stale responses dropped.

export interface LatestWins<A extends unknown[], R> {
  (...args: A): void;
  /** resolves once the queue is idle (tests) */
  idle(): Promise<void>;
  cancel(): void;
}

export function latestWins<A extends unknown[], R>(
  fn: (...args: A) => Promise<R>,
  onResult: (r: R) => void,
  waitMs: number,
  onError: (e: unknown) => void = () => undefined,
): LatestWins<A, R> {
  let timer: ReturnType<typeof setTimeout> | null = null;
  let pendingArgs: A | null = null;
  let inFlight = false;
  let generation = 0;
  let idleResolvers: (() => void)[] = [];

  const maybeIdle = () => {
    if (!inFlight && timer === null && pendingArgs === null) {
      idleResolvers.forEach((r) => r());
      idleResolvers = [];
    }
  };

  const launch = () => {
    if (inFlight || pendingArgs === null) return;
    const args = pendingArgs;
    pendingArgs = null;
    inFlight = true;
    const gen = ++generation;
    fn(...args)
      .then((r) => {
        // drop the response if newer input is already queued or launched
        if (gen === generation && pendingArgs === null) onResult(r);
      })
      .catch((e) => {
        if (gen === generation && pendingArgs === null) onError(e);
      })
      .finally(() => {
        inFlight = false;
        if (pendingArgs !== null) launch();
        else maybeIdle();
      });
  };

  const call = (...args: A) => {
    pendingArgs = args;
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      launch();
    }, waitMs);
  };
  call.idle = () =>
    new Promise<void>((resolve) => {
      idleResolvers.push(resolve);
      maybeIdle();
    });
  call.cancel = () => {
    if (timer !== null) clearTimeout(timer);
    timer = null;
    pendingArgs = null;
    generation++;
    maybeIdle();
  };
  return call as LatestWins<A, R>;
}

/** Debounce trailing-edge: the wrapped function runs once per quiet window
 * with the most recent arguments. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | undefined;
  return (...args: A) => {
    if (timer !== undefined) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = undefined;
      fn(...args);
    }, waitMs);
  };
}

/** Latest-wins wrapper for async work: resolutions of superseded calls are
 * dropped, so at most one response ever reaches the callback out of order. */
export function latestWins<A extends unknown[], R>(
  fn: (...args: A) => Promise<R>,
  onResult: (result: R) => void,
  onError: (err: unknown) => void = () => {},
): (...args: A) => void {
  let generation = 0;
  return (...args: A) => {
    const mine = ++generation;
    fn(...args).then(
      (result) => {
        if (mine === generation) onResult(result);
      },
      (err) => {
        if (mine === generation) onError(err);
      },
    );
  };
}

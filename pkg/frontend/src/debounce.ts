// Debounced commit queue: slider drags fire continuously, but the service
// should see at most one in-flight commit per session, with pending edits
// collapsed into the latest value.

export const COMMIT_DEBOUNCE_MS = 150;

export class CommitQueue<T, R> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private pending: T | null = null;
  private inFlight = false;

  constructor(
    private readonly send: (value: T) => Promise<R>,
    private readonly onResult: (result: R) => void,
    private readonly onError: (err: unknown) => void,
    private readonly delayMs: number = COMMIT_DEBOUNCE_MS,
  ) {}

  /** Schedule a commit; earlier unsent values are replaced. */
  push(value: T): void {
    this.pending = value;
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.flush();
    }, this.delayMs);
  }

  /** Send the pending value now (awaits completion; used by tests and unload). */
  async flush(): Promise<void> {
    if (this.pending === null || this.inFlight) {
      return;
    }
    const value = this.pending;
    this.pending = null;
    this.inFlight = true;
    try {
      const result = await this.send(value);
      this.onResult(result);
    } catch (err) {
      this.onError(err);
    } finally {
      this.inFlight = false;
      if (this.pending !== null) {
        await this.flush(); // an edit arrived while the commit was in flight
      }
    }
  }

  get hasPending(): boolean {
    return this.pending !== null || this.inFlight;
  }
}

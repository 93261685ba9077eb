// Stale-response protection: commits may resolve out of order (slow oracle,
// retries), and the UI must never render a loss that belongs to an older
// revision than the one already on screen.

export interface Revisioned {
  revision: number;
}

export class RevisionGate {
  private rendered = -1;

  /** Returns true when the response is fresh and records it as rendered. */
  accept(response: Revisioned): boolean {
    if (response.revision <= this.rendered) {
      return false;
    }
    this.rendered = response.revision;
    return true;
  }

  get lastRendered(): number {
    return this.rendered;
  }
}

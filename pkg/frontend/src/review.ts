import type { ReviewApi, ReviewItem, Verdict } from './api.js';

export type Labeler = (item: ReviewItem) => Verdict | Promise<Verdict>;

/**
 * Label every remaining item of a session in presentation order.
 *
 * The labeler decides each verdict; it only ever sees the public item
 * payload. Returns the number of items labelled by this call.
 */
export async function runReview(
  api: ReviewApi,
  sessionId: string,
  labeler: Labeler,
  onItem?: (item: ReviewItem) => void,
): Promise<number> {
  let labelled = 0;
  for (;;) {
    const next = await api.nextItem(sessionId);
    if (next.complete) return labelled;
    if (onItem) onItem(next);
    const started = performance.now();
    const verdict = await labeler(next);
    await api.submitLabel(sessionId, next.item_id, verdict,
                          performance.now() - started);
    labelled += 1;
  }
}

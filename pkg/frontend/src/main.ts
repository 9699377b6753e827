import { ReviewApi } from './api.js';
import type { ReviewItem, Verdict } from './api.js';
import { renderItem, renderReport } from './render.js';
import { runReview } from './review.js';

function byId<T extends HTMLElement>(root: Document, id: string): T {
  const node = root.getElementById(id);
  if (node === null) throw new Error(`Missing element #${id}`);
  return node as T;
}

export function initApp(root: Document, api: ReviewApi): void {
  const setup = byId<HTMLElement>(root, 'setup');
  const review = byId<HTMLElement>(root, 'review');
  const reportSection = byId<HTMLElement>(root, 'report');
  const stage = byId<HTMLElement>(root, 'stage');
  const status = byId<HTMLElement>(root, 'status');

  let resolveVerdict: ((verdict: Verdict) => void) | null = null;
  const choose = (verdict: Verdict) => {
    if (resolveVerdict === null) return;
    const resolve = resolveVerdict;
    resolveVerdict = null;
    resolve(verdict);
  };
  byId<HTMLButtonElement>(root, 'label-real')
    .addEventListener('click', () => choose('real'));
  byId<HTMLButtonElement>(root, 'label-synthetic')
    .addEventListener('click', () => choose('synthetic'));
  const awaitVerdict = () =>
    new Promise<Verdict>((resolve) => { resolveVerdict = resolve; });

  async function start(): Promise<void> {
    const nEach = Number(byId<HTMLInputElement>(root, 'n-each').value);
    const seed = Number(byId<HTMLInputElement>(root, 'seed').value);
    status.textContent = 'Starting session...';
    const summary = await api.createSession({ nEach, seed });
    setup.hidden = true;
    review.hidden = false;
    status.textContent = '';
    await runReview(api, summary.session_id, awaitVerdict, (item: ReviewItem) => {
      renderItem(stage, item, api.resolveUrl(item.image_url));
    });
    review.hidden = true;
    const [report, csv] = await Promise.all([
      api.report(summary.session_id),
      api.reportCsv(summary.session_id),
    ]);
    renderReport(reportSection, report, csv);
    reportSection.hidden = false;
  }

  byId<HTMLButtonElement>(root, 'start').addEventListener('click', () => {
    start().catch((err) => { status.textContent = String(err); });
  });
}

if (typeof document !== 'undefined'
    && document.getElementById('review-app') !== null) {
  initApp(document, new ReviewApi());
}

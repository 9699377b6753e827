export interface SessionSummary {
  session_id: string;
  total: number;
  position: number;
  complete: boolean;
}

export interface ReviewItem {
  session_id: string;
  item_id: string;
  position: number;
  total: number;
  image_url: string;
  complete: false;
}

export interface SessionDone {
  session_id: string;
  position: number;
  total: number;
  complete: true;
}

export type NextResponse = ReviewItem | SessionDone;

export type Verdict = 'real' | 'synthetic';

export interface ReportRow {
  item_id: string;
  truth: string;
  label: string;
  latency_ms: number | null;
}

export interface SessionReport {
  session_id: string;
  n_items: number;
  n_correct: number;
  accuracy: number;
  z: number;
  p_two_sided: number;
  confusion: Record<string, Record<string, number>>;
  rows: ReportRow[];
}

export interface CreateSessionOptions {
  nEach?: number;
  seed?: number;
  sessionId?: string;
  realManifest?: string;
  syntheticManifest?: string;
}

async function postJson<T>(url: string, body: unknown): Promise<T> {
  const res = await fetch(url, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: JSON.stringify(body),
  });
  if (!res.ok) throw new Error(`Request to ${url} failed: ${res.status}`);
  return res.json();
}

export class ReviewApi {
  constructor(private readonly base: string = '') {}

  resolveUrl(path: string): string {
    return this.base + path;
  }

  async createSession(options: CreateSessionOptions = {}): Promise<SessionSummary> {
    const body: Record<string, unknown> = {};
    if (options.nEach !== undefined) body.n_each = options.nEach;
    if (options.seed !== undefined) body.seed = options.seed;
    if (options.sessionId !== undefined) body.session_id = options.sessionId;
    if (options.realManifest !== undefined) body.real_manifest = options.realManifest;
    if (options.syntheticManifest !== undefined) {
      body.synthetic_manifest = options.syntheticManifest;
    }
    return postJson<SessionSummary>(`${this.base}/sessions`, body);
  }

  async getSession(sessionId: string): Promise<SessionSummary> {
    const res = await fetch(`${this.base}/sessions/${encodeURIComponent(sessionId)}`);
    if (!res.ok) throw new Error(`Failed to fetch session: ${res.status}`);
    return res.json();
  }

  async nextItem(sessionId: string): Promise<NextResponse> {
    const sid = encodeURIComponent(sessionId);
    const res = await fetch(`${this.base}/sessions/${sid}/next`);
    if (!res.ok) throw new Error(`Failed to fetch next item: ${res.status}`);
    return res.json();
  }

  async submitLabel(sessionId: string, itemId: string, label: Verdict,
                    latencyMs?: number): Promise<SessionSummary> {
    const body: Record<string, unknown> = { item_id: itemId, label };
    if (latencyMs !== undefined) body.latency_ms = latencyMs;
    const sid = encodeURIComponent(sessionId);
    return postJson<SessionSummary>(`${this.base}/sessions/${sid}/labels`, body);
  }

  async report(sessionId: string): Promise<SessionReport> {
    const sid = encodeURIComponent(sessionId);
    const res = await fetch(`${this.base}/sessions/${sid}/report`);
    if (!res.ok) throw new Error(`Failed to fetch report: ${res.status}`);
    return res.json();
  }

  async reportCsv(sessionId: string): Promise<string> {
    const sid = encodeURIComponent(sessionId);
    const res = await fetch(`${this.base}/sessions/${sid}/report?format=csv`);
    if (!res.ok) throw new Error(`Failed to fetch CSV report: ${res.status}`);
    return res.text();
  }
}

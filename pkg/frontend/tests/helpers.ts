export const API_BASE = 'http://127.0.0.1:8799';

// Mirrors the service's blinding contract: these keys must never appear
// in any payload sent before the report is requested.
export const GROUND_TRUTH_KEYS =
  ['truth', 'provenance', 'generator_ref', 'source_ref', 'tile_id'] as const;

export interface CapturedCall {
  url: string;
  method: string;
  requestBody: unknown;
  responseBody: unknown;
}

/**
 * Wrap global fetch so every call is recorded with its parsed request and
 * response bodies. Returns the capture list and a restore function.
 */
export function captureFetch(): { calls: CapturedCall[]; restore: () => void } {
  const calls: CapturedCall[] = [];
  const previous = globalThis.fetch;
  const original = previous.bind(globalThis);
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const res = await original(input, init);
    // happy-dom drains the original body on clone(), so rebuild the
    // response from the recorded bytes instead.
    const buffer = await res.arrayBuffer();
    const text = new TextDecoder().decode(buffer);
    let responseBody: unknown = text;
    try {
      responseBody = JSON.parse(text);
    } catch {
      // CSV and images stay as text
    }
    let requestBody: unknown = null;
    if (init && typeof init.body === 'string') {
      requestBody = JSON.parse(init.body);
    }
    calls.push({
      url: String(input),
      method: init?.method ?? 'GET',
      requestBody,
      responseBody,
    });
    return new Response(buffer, {
      status: res.status,
      statusText: res.statusText,
      headers: res.headers,
    });
  }) as typeof fetch;
  return { calls, restore: () => { globalThis.fetch = previous; } };
}

/** Every forbidden key found at any depth of a JSON payload. */
export function findGroundTruthKeys(node: unknown, path = ''): string[] {
  const found: string[] = [];
  if (Array.isArray(node)) {
    node.forEach((value, index) => {
      found.push(...findGroundTruthKeys(value, `${path}[${index}]`));
    });
  } else if (node !== null && typeof node === 'object') {
    for (const [key, value] of Object.entries(node)) {
      if ((GROUND_TRUTH_KEYS as readonly string[]).includes(key)) {
        found.push(`${path}/${key}`);
      }
      found.push(...findGroundTruthKeys(value, `${path}/${key}`));
    }
  }
  return found;
}

/** Poll until the condition holds; fails the test on timeout. */
export async function until(condition: () => boolean, timeoutMs = 5000):
    Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!condition()) {
    if (Date.now() > deadline) throw new Error('timed out waiting for condition');
    await new Promise((resolve) => setTimeout(resolve, 5));
  }
}

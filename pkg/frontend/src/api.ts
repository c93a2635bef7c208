import type { CaseView, SessionSummary } from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

type FetchFn = typeof fetch;

async function parseError(resp: Response): Promise<ApiError> {
  let detail = `HTTP ${resp.status}`;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body: keep the status line
  }
  return new ApiError(resp.status, detail);
}

export class ApiClient {
  private fetchFn: FetchFn;

  constructor(public baseUrl: string, fetchFn?: FetchFn) {
    this.fetchFn = fetchFn ?? globalThis.fetch.bind(globalThis);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  startSession(body: {
    user: string;
    task: string;
    observation_ref: string;
    scene_label?: string;
  }): Promise<{ session_id: string; status: string }> {
    return this.request("/sessions", { method: "POST", body: JSON.stringify(body) });
  }

  getSession(sessionId: string): Promise<SessionSummary> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}`);
  }

  feedback(
    sessionId: string,
    body: { action: string; text?: string; category?: string; round_token?: string },
  ): Promise<SessionSummary> {
    return this.request(`/sessions/${encodeURIComponent(sessionId)}/feedback`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  cases(): Promise<CaseView[]> {
    return this.request("/cases");
  }

  eventsUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/events`;
  }
}

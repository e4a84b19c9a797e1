// API client. All data shown in the UI comes through here; nothing is
// re-derived client-side. Concurrent fetches are allowed; responses
// arriving out of order are discarded by per-channel sequence number.

import type { ApiError, EmailRecord, FeedEvent, SearchResult } from "./types.js";

const TOKEN_KEY = "poststack.token";

export function getToken(): string {
  return sessionStorage.getItem(TOKEN_KEY) ?? "";
}

export function setToken(token: string): void {
  if (token) sessionStorage.setItem(TOKEN_KEY, token);
  else sessionStorage.removeItem(TOKEN_KEY);
}

export class ApiRequestError extends Error {
  constructor(public readonly detail: ApiError) {
    super(detail.message);
  }
}

/** Thrown when a newer request on the same channel has superseded this one. */
export class StaleResponse extends Error {
  constructor() {
    super("stale response discarded");
  }
}

export class ApiClient {
  private seq = new Map<string, number>();

  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  /** Resolve the API base from /config.json (falls back to same origin). */
  static async fromConfig(fetchFn: typeof fetch = fetch.bind(globalThis)): Promise<ApiClient> {
    try {
      const resp = await fetchFn("/config.json");
      if (resp.ok) {
        const cfg = await resp.json();
        if (typeof cfg.apiBase === "string") return new ApiClient(cfg.apiBase, fetchFn);
      }
    } catch {
      // fall through to same-origin
    }
    return new ApiClient("", fetchFn);
  }

  private headers(): Record<string, string> {
    const token = getToken();
    return token ? { authorization: `Bearer ${token}` } : {};
  }

  /**
   * Fetch JSON on a named channel. If another request starts on the
   * same channel before this one resolves, the late result is rejected
   * with StaleResponse instead of being delivered.
   */
  private async getJson<T>(channel: string, path: string): Promise<T> {
    const my = (this.seq.get(channel) ?? 0) + 1;
    this.seq.set(channel, my);
    const resp = await this.fetchFn(this.baseUrl + path, { headers: this.headers() });
    if (this.seq.get(channel) !== my) throw new StaleResponse();
    if (!resp.ok) {
      let detail: ApiError;
      try {
        detail = await resp.json();
      } catch {
        detail = { status: resp.status, code: "HttpError", message: resp.statusText };
      }
      throw new ApiRequestError(detail);
    }
    return (await resp.json()) as T;
  }

  search(query: string, cursor?: string | null): Promise<SearchResult> {
    const params = new URLSearchParams({ q: query });
    if (cursor) params.set("cursor", cursor);
    return this.getJson("search", `/v1/emails?${params.toString()}`);
  }

  record(emailId: string): Promise<EmailRecord> {
    return this.getJson("record", `/v1/emails/${emailId}`);
  }

  rawUrl(emailId: string): string {
    return `${this.baseUrl}/v1/emails/${emailId}/raw`;
  }

  attachmentUrl(emailId: string, n: number): string {
    return `${this.baseUrl}/v1/emails/${emailId}/attachments/${n}`;
  }

  async flagsSince(since: string): Promise<FeedEvent[]> {
    const params = since ? `?since=${encodeURIComponent(since)}` : "";
    const resp = await this.fetchFn(`${this.baseUrl}/v1/flags${params}`, {
      headers: this.headers(),
    });
    if (!resp.ok) {
      throw new ApiRequestError({
        status: resp.status, code: "HttpError", message: resp.statusText,
      });
    }
    const text = await resp.text();
    const events: FeedEvent[] = [];
    for (const line of text.split("\n")) {
      if (!line.trim()) continue;
      try {
        events.push(JSON.parse(line));
      } catch {
        // skip malformed lines; the feed is append-only NDJSON
      }
    }
    return events;
  }

  health(): Promise<{ status: string }> {
    return this.getJson("health", "/v1/health");
  }
}

// View contract tests against a stubbed API client: search rendering,
// detail rationale, and the polling feed.

import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import type { ApiClient } from "../src/api.js";
import { ApiRequestError } from "../src/api.js";
import { DetailView } from "../src/views/detail.js";
import { FeedView, POLL_INTERVAL_MS } from "../src/views/feed.js";
import { SearchView } from "../src/views/search.js";
import type { EmailRecord, FeedEvent, SearchResult } from "../src/types.js";

function stubApi(overrides: Partial<Record<string, unknown>>): ApiClient {
  return {
    search: () => Promise.resolve({ hits: [], total_count: 0, next_cursor: null }),
    record: () => Promise.reject(new Error("not stubbed")),
    flagsSince: () => Promise.resolve([]),
    rawUrl: (id: string) => `/v1/emails/${id}/raw`,
    attachmentUrl: (id: string, n: number) => `/v1/emails/${id}/attachments/${n}`,
    ...overrides,
  } as unknown as ApiClient;
}

const HIT = {
  email_id: "a".repeat(64),
  snippet: "…wire transfer…",
  score: 3,
  verdict: { classification: "malicious", threat_score: 85, disposition: "blocked" },
  received_at: "2026-02-01T10:00:00Z",
  subject: "urgent payment",
};

describe("SearchView", () => {
  it("renders one row per API hit with verdict badge and score", async () => {
    const result: SearchResult = { hits: [HIT], total_count: 1, next_cursor: null };
    const view = new SearchView(stubApi({ search: () => Promise.resolve(result) }), () => {});
    await view.run();
    const rows = view.root.querySelectorAll("tr.hit");
    expect(rows).toHaveLength(1);
    expect(rows[0].textContent).toContain("urgent payment");
    expect(rows[0].querySelector(".badge-malicious")).not.toBeNull();
    expect(view.root.textContent).toContain("1 result(s)");
  });

  it("zero results show an explicit empty state", async () => {
    const view = new SearchView(stubApi({}), () => {});
    await view.run();
    expect(view.root.querySelector(".empty-state")!.textContent)
      .toContain("No emails match");
  });

  it("renders the API's QuerySyntaxError inline", async () => {
    const err = new ApiRequestError({
      status: 400, code: "QuerySyntaxError", message: "unbalanced paren at position 0",
    });
    const view = new SearchView(stubApi({ search: () => Promise.reject(err) }), () => {});
    await view.run();
    const box = view.root.querySelector(".query-error")!;
    expect(box.hasAttribute("hidden")).toBe(false);
    expect(box.textContent).toContain("QuerySyntaxError");
    expect(box.textContent).toContain("unbalanced paren");
  });

  it("clicking a row opens the detail view", async () => {
    const result: SearchResult = { hits: [HIT], total_count: 1, next_cursor: null };
    const opened: string[] = [];
    const view = new SearchView(
      stubApi({ search: () => Promise.resolve(result) }),
      (id) => opened.push(id),
    );
    await view.run();
    (view.root.querySelector("tr.hit") as HTMLElement).click();
    expect(opened).toEqual([HIT.email_id]);
  });

  it("shows a next-page button only when the API returns a cursor", async () => {
    const paged: SearchResult = { hits: [HIT], total_count: 300, next_cursor: "tok" };
    const queries: (string | null | undefined)[] = [];
    const api = stubApi({
      search: (_q: string, cursor?: string | null) => {
        queries.push(cursor);
        return Promise.resolve(paged);
      },
    });
    const view = new SearchView(api, () => {});
    await view.run();
    const next = view.root.querySelector(".next-page") as HTMLElement;
    expect(next).not.toBeNull();
    next.click();
    await Promise.resolve();
    expect(queries).toEqual([undefined, "tok"]);
  });
});

function makeRecord(): EmailRecord {
  return {
    email: {
      email_id: "b".repeat(64),
      headers: [],
      from: [{ display_name: "PayPal Support", local_part: "mallory", domain: "bad.test" }],
      to: [{ display_name: null, local_part: "bob", domain: "corp.test" }],
      cc: [], reply_to: [],
      subject: "account suspended",
      date: "2026-02-01T10:00:00Z",
      message_id: null,
      body_text: "verify now",
      body_html: "<p>verify</p><script>globalThis.__viewPwned = true;</script>",
      links: [{
        url: "http://evil.test/login", scheme: "http", host: "evil.test",
        origin: "plain_text", display_text: null, display_mismatch: false,
      }],
      attachments: [],
      parse_warnings: [], encoded_word_count: 0,
    },
    ingest: {
      email_id: "b".repeat(64), source: "smtp",
      received_at: "2026-02-01T10:00:00Z", duplicate: false, raw_size: 100,
    },
    flags: [
      { source: "intel", severity: 80, reason: "blocklisted_domain",
        evidence: "evil.test is blocklisted", target: "link:http://evil.test/login",
        created_at: "t" },
      { source: "semantic", severity: 55, reason: "display_name_spoof",
        evidence: "display name PayPal Support vs domain bad.test", target: "email",
        created_at: "t" },
    ],
    attachment_analyses: [],
    verdict: { classification: "malicious", threat_score: 100,
               disposition: "blocked", contributing: [[0, 1.0], [1, 0.8]] },
    direction: "inbound",
  };
}

describe("DetailView", () => {
  it("shows verdict, disposition, and one rationale card per flag naming its analyzer", () => {
    const view = new DetailView(stubApi({}), () => {});
    view.render(makeRecord());
    expect(view.root.querySelector(".badge-malicious")).not.toBeNull();
    expect(view.root.querySelector(".disposition")!.textContent).toContain("blocked");
    const groups = view.root.querySelectorAll(".flag-group");
    expect(groups).toHaveLength(2);
    const analyzers = [...groups].map((g) => g.getAttribute("data-analyzer"));
    expect(analyzers.sort()).toEqual(["intel", "semantic"]);
    const cards = view.root.querySelectorAll(".flag-card");
    expect(cards).toHaveLength(2);
    expect(view.root.textContent).toContain("evil.test is blocklisted");
    expect(view.root.textContent).toContain("display name PayPal Support");
  });

  it("renders email HTML inert (no script runs, no script element present)", () => {
    (globalThis as Record<string, unknown>).__viewPwned = false;
    const view = new DetailView(stubApi({}), () => {});
    view.render(makeRecord());
    document.body.appendChild(view.root);
    expect((globalThis as Record<string, unknown>).__viewPwned).toBe(false);
    expect(view.root.querySelector(".email-html-sandbox script")).toBeNull();
    expect(view.root.querySelector(".email-html-sandbox")!.textContent).toContain("verify");
    document.body.removeChild(view.root);
  });

  it("link host pivots into body OR attachment search", () => {
    const pivots: string[] = [];
    const view = new DetailView(stubApi({}), (q) => pivots.push(q));
    view.render(makeRecord());
    (view.root.querySelector(".pivot-host") as HTMLElement).click();
    expect(pivots).toEqual(["body:evil.test OR attachment:evil.test"]);
  });

  it("sender pivots into a from: search", () => {
    const pivots: string[] = [];
    const view = new DetailView(stubApi({}), (q) => pivots.push(q));
    view.render(makeRecord());
    (view.root.querySelector(".pivot-sender") as HTMLElement).click();
    expect(pivots).toEqual(["from:mallory@bad.test"]);
  });

  it("offers a raw download pointing at the raw endpoint", () => {
    const view = new DetailView(stubApi({}), () => {});
    view.render(makeRecord());
    const a = view.root.querySelector(".raw-download") as HTMLAnchorElement;
    expect(a.getAttribute("href")).toBe(`/v1/emails/${"b".repeat(64)}/raw`);
  });
});

describe("FeedView", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("shows a new verdict event within one poll interval", async () => {
    let events: FeedEvent[] = [];
    const view = new FeedView(
      stubApi({ flagsSince: () => Promise.resolve(events) }),
      () => {},
    );
    view.start();
    await vi.advanceTimersByTimeAsync(10);
    expect(view.root.querySelectorAll(".feed-row")).toHaveLength(0);
    events = [{ ts: "2026-02-01T10:00:00Z", email_id: "c".repeat(64),
                kind: "verdict", classification: "malicious", disposition: "blocked" }];
    await vi.advanceTimersByTimeAsync(POLL_INTERVAL_MS + 10);
    const rows = view.root.querySelectorAll(".feed-row");
    expect(rows).toHaveLength(1);
    expect(rows[0].textContent).toContain("malicious");
    view.stop();
  });

  it("feed rows link to the detail view", async () => {
    const opened: string[] = [];
    const view = new FeedView(
      stubApi({
        flagsSince: () => Promise.resolve([
          { ts: "t1", email_id: "d".repeat(64), kind: "flag", reason: "rule:wire" },
        ]),
      }),
      (id) => opened.push(id),
    );
    await view.poll();
    (view.root.querySelector(".feed-link") as HTMLElement).click();
    expect(opened).toEqual(["d".repeat(64)]);
  });

  it("API unreachable shows the reconnect banner, recovery hides it", async () => {
    let down = true;
    const view = new FeedView(
      stubApi({
        flagsSince: () =>
          down ? Promise.reject(new Error("ECONNREFUSED")) : Promise.resolve([]),
      }),
      () => {},
    );
    await view.poll();
    expect(view.root.querySelector(".reconnect-banner")!.hasAttribute("hidden")).toBe(false);
    down = false;
    await view.poll();
    expect(view.root.querySelector(".reconnect-banner")!.hasAttribute("hidden")).toBe(true);
  });

  it("does not duplicate events repeated across polls", async () => {
    const ev: FeedEvent = { ts: "t1", email_id: "e".repeat(64), kind: "flag" };
    const view = new FeedView(stubApi({ flagsSince: () => Promise.resolve([ev]) }), () => {});
    await view.poll();
    await view.poll();
    expect(view.root.querySelectorAll(".feed-row")).toHaveLength(1);
  });
});

// Flags feed: polls GET /v1/flags?since= every 5 s, newest first.
// Shows a reconnect banner while the API is unreachable.

import { ApiClient } from "../api.js";
import { clear, el } from "../render.js";
import type { FeedEvent } from "../types.js";

export const POLL_INTERVAL_MS = 5000;
const MAX_ROWS = 200;

export class FeedView {
  readonly root: HTMLElement;
  private table: HTMLElement;
  private banner: HTMLElement;
  private events: FeedEvent[] = [];
  private since = "";
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly openDetail: (emailId: string) => void,
  ) {
    this.banner = el("div", { class: "reconnect-banner", hidden: "" }, [
      "API unreachable — retrying…",
    ]);
    this.table = el("div", { class: "feed-table" });
    this.root = el("section", { class: "feed-view" }, [
      el("h2", {}, ["Flag feed"]),
      this.banner,
      this.table,
    ]);
  }

  start(): void {
    void this.poll();
    this.timer = setInterval(() => void this.poll(), POLL_INTERVAL_MS);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async poll(): Promise<void> {
    let fresh: FeedEvent[];
    try {
      fresh = await this.api.flagsSince(this.since);
    } catch {
      this.banner.removeAttribute("hidden");
      return;
    }
    this.banner.setAttribute("hidden", "");
    if (fresh.length > 0) {
      // strictly-after cursor: next poll asks for events newer than the
      // latest seen timestamp; equal-ts duplicates are dropped by key
      const seen = new Set(this.events.map((e) => `${e.ts}|${e.email_id}|${e.kind}`));
      for (const ev of fresh) {
        const key = `${ev.ts}|${ev.email_id}|${ev.kind}`;
        if (!seen.has(key)) {
          this.events.push(ev);
          seen.add(key);
        }
      }
      this.since = this.events.reduce((m, e) => (e.ts > m ? e.ts : m), this.since);
      this.events = this.events.slice(-MAX_ROWS);
      this.render();
    }
  }

  private render(): void {
    clear(this.table);
    // newest first
    for (const ev of [...this.events].reverse()) {
      const row = el("div", { class: `feed-row feed-${ev.kind}` }, [
        el("span", { class: "ts" }, [ev.ts]),
        el("span", { class: "kind" }, [ev.kind]),
        el("span", { class: "detail" }, [
          ev.kind === "verdict"
            ? `${(ev as Record<string, unknown>).classification ?? ""} (${(ev as Record<string, unknown>).disposition ?? ""})`
            : `${(ev as Record<string, unknown>).reason ?? ""}`,
        ]),
      ]);
      const link = el("button", { class: "feed-link" }, [ev.email_id.slice(0, 16)]);
      link.addEventListener("click", () => this.openDetail(ev.email_id));
      row.appendChild(link);
      this.table.appendChild(row);
    }
  }
}

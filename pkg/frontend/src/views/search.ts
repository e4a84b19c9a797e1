// Search view: query box, facet chips, results table, cursor pagination.

import { ApiClient, ApiRequestError, StaleResponse } from "../api.js";
import { buildQuery, Facets } from "../query.js";
import { clear, el, verdictBadge } from "../render.js";
import type { SearchResult } from "../types.js";

export class SearchView {
  readonly root: HTMLElement;
  private facets: Facets = { verdict: "", hasAttachment: false };
  private input: HTMLInputElement;
  private results: HTMLElement;
  private errorBox: HTMLElement;
  private pager: HTMLElement;
  private lastQuery = "";

  constructor(
    private readonly api: ApiClient,
    private readonly openDetail: (emailId: string) => void,
  ) {
    this.input = el("input", {
      type: "search",
      placeholder: "subject:invoice verdict:malicious has:attachment …",
      class: "query-box",
    }) as HTMLInputElement;
    this.errorBox = el("div", { class: "query-error", hidden: "" });
    this.results = el("div", { class: "results" });
    this.pager = el("div", { class: "pager" });
    const form = el("form", { class: "search-form" }, [
      this.input,
      el("button", { type: "submit" }, ["Search"]),
    ]);
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.run();
    });
    this.root = el("section", { class: "search-view" }, [
      form,
      this.facetBar(),
      this.errorBox,
      this.results,
      this.pager,
    ]);
  }

  private facetBar(): HTMLElement {
    const bar = el("div", { class: "facets" });
    for (const v of ["benign", "spam", "malicious"] as const) {
      const chip = el("button", { class: "chip", "data-facet": `verdict-${v}` }, [v]);
      chip.addEventListener("click", () => {
        this.facets.verdict = this.facets.verdict === v ? "" : v;
        this.refreshChips(bar);
        void this.run();
      });
      bar.appendChild(chip);
    }
    const att = el("button", { class: "chip", "data-facet": "has-attachment" }, [
      "has attachment",
    ]);
    att.addEventListener("click", () => {
      this.facets.hasAttachment = !this.facets.hasAttachment;
      this.refreshChips(bar);
      void this.run();
    });
    bar.appendChild(att);
    return bar;
  }

  private refreshChips(bar: HTMLElement): void {
    bar.querySelectorAll(".chip").forEach((chip) => {
      const f = chip.getAttribute("data-facet") ?? "";
      const active =
        f === `verdict-${this.facets.verdict}` ||
        (f === "has-attachment" && this.facets.hasAttachment);
      chip.classList.toggle("active", active);
    });
  }

  /** Run a search from outside (pivot links land here). */
  setQuery(query: string): void {
    this.input.value = query;
    this.facets = { verdict: "", hasAttachment: false };
    void this.run();
  }

  async run(cursor?: string | null): Promise<void> {
    this.lastQuery = buildQuery(this.input.value, this.facets);
    this.errorBox.setAttribute("hidden", "");
    let result: SearchResult;
    try {
      result = await this.api.search(this.lastQuery, cursor);
    } catch (err) {
      if (err instanceof StaleResponse) return;
      if (err instanceof ApiRequestError) {
        this.errorBox.removeAttribute("hidden");
        this.errorBox.textContent = `${err.detail.code}: ${err.detail.message}`;
        return;
      }
      throw err;
    }
    this.renderResults(result);
  }

  private renderResults(result: SearchResult): void {
    clear(this.results);
    clear(this.pager);
    if (result.hits.length === 0) {
      this.results.appendChild(
        el("p", { class: "empty-state" }, ["No emails match this query."]),
      );
      return;
    }
    const table = el("table", { class: "results-table" });
    table.appendChild(
      el("tr", {}, [
        el("th", {}, ["date"]),
        el("th", {}, ["subject"]),
        el("th", {}, ["verdict"]),
        el("th", {}, ["score"]),
        el("th", {}, ["snippet"]),
      ]),
    );
    for (const hit of result.hits) {
      const row = el("tr", { class: "hit", "data-email-id": hit.email_id }, [
        el("td", {}, [hit.received_at.slice(0, 10)]),
        el("td", {}, [hit.subject || "(no subject)"]),
        el("td", {}, [
          verdictBadge(hit.verdict ? hit.verdict.classification : null,
                       hit.verdict ? hit.verdict.threat_score : undefined),
        ]),
        el("td", {}, [hit.verdict ? String(hit.verdict.threat_score) : "—"]),
        el("td", { class: "snippet" }, [hit.snippet]),
      ]);
      row.addEventListener("click", () => this.openDetail(hit.email_id));
      table.appendChild(row);
    }
    this.results.appendChild(table);
    this.pager.appendChild(
      el("span", { class: "total" }, [`${result.total_count} result(s)`]),
    );
    if (result.next_cursor) {
      const next = el("button", { class: "next-page" }, ["Next page"]);
      next.addEventListener("click", () => void this.run(result.next_cursor));
      this.pager.appendChild(next);
    }
  }
}

// Detail view: headers, inert bodies, attachments, verdict panel, and
// per-analyzer flag rationale with IOC pivot links.

import { ApiClient, StaleResponse } from "../api.js";
import { pivotHostQuery, pivotSenderQuery } from "../query.js";
import { clear, el, verdictBadge } from "../render.js";
import { sanitizeEmailHtml } from "../sanitize.js";
import type { Address, EmailRecord, Flag } from "../types.js";

export class DetailView {
  readonly root: HTMLElement;

  constructor(
    private readonly api: ApiClient,
    private readonly pivot: (query: string) => void,
  ) {
    this.root = el("section", { class: "detail-view" });
  }

  async show(emailId: string): Promise<void> {
    let record: EmailRecord;
    try {
      record = await this.api.record(emailId);
    } catch (err) {
      if (err instanceof StaleResponse) return;
      clear(this.root);
      this.root.appendChild(el("p", { class: "error" }, [String(err)]));
      return;
    }
    this.render(record);
  }

  private addressLink(addr: Address): HTMLElement {
    const text = addr.display_name
      ? `${addr.display_name} <${addr.local_part}@${addr.domain}>`
      : `${addr.local_part}@${addr.domain}`;
    const link = el("button", { class: "pivot pivot-sender" }, [text]);
    link.addEventListener("click", () =>
      this.pivot(pivotSenderQuery(`${addr.local_part}@${addr.domain}`)),
    );
    return link;
  }

  private hostLink(host: string): HTMLElement {
    const link = el("button", { class: "pivot pivot-host" }, [host]);
    link.addEventListener("click", () => this.pivot(pivotHostQuery(host)));
    return link;
  }

  render(record: EmailRecord): void {
    clear(this.root);
    const email = record.email;

    // verdict panel: classification, score, and whether the mail was
    // delivered to the recipient or blocked
    const verdict = record.verdict;
    this.root.appendChild(
      el("div", { class: "verdict-panel" }, [
        verdictBadge(verdict ? verdict.classification : null),
        el("span", { class: "score" }, [
          verdict ? `threat score ${verdict.threat_score}` : "processing…",
        ]),
        el("span", { class: `disposition disposition-${verdict?.disposition ?? "pending"}` }, [
          verdict ? `disposition: ${verdict.disposition}` : "",
        ]),
      ]),
    );

    // headers
    const head = el("div", { class: "headers" });
    head.appendChild(el("h2", {}, [email.subject || "(no subject)"]));
    const fromRow = el("div", { class: "hrow" }, ["From: "]);
    for (const a of email.from) fromRow.appendChild(this.addressLink(a));
    head.appendChild(fromRow);
    const toRow = el("div", { class: "hrow" }, ["To: "]);
    for (const a of email.to) toRow.appendChild(this.addressLink(a));
    head.appendChild(toRow);
    if (email.date) head.appendChild(el("div", { class: "hrow" }, [`Date: ${email.date}`]));
    const rawBtn = el("a", {
      class: "raw-download",
      href: this.api.rawUrl(email.email_id),
      download: `${email.email_id}.eml`,
    }, ["Download raw"]);
    head.appendChild(rawBtn);
    this.root.appendChild(head);

    // bodies — text verbatim, HTML through the sandbox sanitizer
    if (email.body_text) {
      this.root.appendChild(el("pre", { class: "body-text" }, [email.body_text]));
    }
    if (email.body_html) {
      this.root.appendChild(sanitizeEmailHtml(email.body_html));
    }

    // links with pivots
    if (email.links.length > 0) {
      const list = el("ul", { class: "links" });
      for (const link of email.links) {
        list.appendChild(
          el("li", {}, [
            el("code", {}, [link.url]),
            ` (${link.origin}) `,
            this.hostLink(link.host),
          ]),
        );
      }
      this.root.appendChild(el("div", { class: "links-panel" }, [
        el("h3", {}, ["Links"]), list,
      ]));
    }

    // attachments with download
    if (email.attachments.length > 0) {
      const list = el("ul", { class: "attachments" });
      for (const att of email.attachments) {
        list.appendChild(
          el("li", {}, [
            el("a", { href: this.api.attachmentUrl(email.email_id, att.index) }, [
              att.filename ?? `attachment-${att.index}`,
            ]),
            ` ${att.declared_mime}, ${att.size} bytes`,
          ]),
        );
      }
      this.root.appendChild(el("div", { class: "attachments-panel" }, [
        el("h3", {}, ["Attachments"]), list,
      ]));
    }

    // flag rationale grouped by source analyzer
    const bySource = new Map<string, Flag[]>();
    for (const flag of record.flags) {
      const group = bySource.get(flag.source) ?? [];
      group.push(flag);
      bySource.set(flag.source, group);
    }
    const flagsPanel = el("div", { class: "flags-panel" }, [el("h3", {}, ["Flags"])]);
    if (record.flags.length === 0) {
      flagsPanel.appendChild(el("p", { class: "empty-state" }, ["No analyzer flags."]));
    }
    for (const [source, flags] of bySource) {
      const group = el("div", { class: "flag-group", "data-analyzer": source }, [
        el("h4", {}, [source]),
      ]);
      for (const flag of flags) {
        group.appendChild(
          el("div", { class: "flag-card" }, [
            el("span", { class: "flag-severity" }, [String(flag.severity)]),
            el("span", { class: "flag-reason" }, [flag.reason]),
            el("p", { class: "flag-evidence" }, [flag.evidence]),
            el("span", { class: "flag-target" }, [flag.target]),
          ]),
        );
      }
      flagsPanel.appendChild(group);
    }
    this.root.appendChild(flagsPanel);
  }
}

// Sandbox property: rendered email HTML executes no script, triggers no
// fetches, and has all links disabled.

import { describe, expect, it } from "vitest";
import { sanitizeEmailHtml } from "../src/sanitize.js";

describe("sanitizeEmailHtml", () => {
  it("strips script elements and never executes them", () => {
    (globalThis as Record<string, unknown>).__pwned = false;
    const out = sanitizeEmailHtml(
      '<p>hi</p><script>globalThis.__pwned = true;</script>',
    );
    document.body.appendChild(out);
    expect((globalThis as Record<string, unknown>).__pwned).toBe(false);
    expect(out.querySelector("script")).toBeNull();
    expect(out.textContent).toContain("hi");
    expect(out.textContent).not.toContain("__pwned");
  });

  it("removes event handler attributes", () => {
    const out = sanitizeEmailHtml('<div onclick="globalThis.__pwned=1">x</div>');
    const div = out.querySelector("div");
    expect(div).not.toBeNull();
    expect(div!.attributes.length).toBe(0);
  });

  it("disables links but keeps the URL for copying", () => {
    const out = sanitizeEmailHtml('<a href="http://evil.test/login">click</a>');
    expect(out.querySelector("a")).toBeNull();
    const span = out.querySelector("span.disabled-link");
    expect(span).not.toBeNull();
    expect(span!.getAttribute("data-url")).toBe("http://evil.test/login");
    expect(span!.textContent).toBe("click");
  });

  it("drops every URL-bearing or fetching element", () => {
    const out = sanitizeEmailHtml(
      '<img src="http://t.test/x.png"><iframe src="http://t.test"></iframe>' +
      '<object data="a"></object><embed src="b">' +
      '<link rel="stylesheet" href="http://t.test/x.css">' +
      '<form action="http://t.test"><input></form>' +
      '<video src="v.mp4"></video><audio src="a.mp3"></audio>',
    );
    expect(out.querySelectorAll("img,iframe,object,embed,link,form,input,video,audio").length).toBe(0);
    // nothing left that could carry a fetchable URL
    for (const attr of ["src", "srcset", "href", "action", "data", "background", "style"]) {
      expect(out.querySelector(`[${attr}]`)).toBeNull();
    }
  });

  it("drops javascript: URLs along with all other hrefs", () => {
    const out = sanitizeEmailHtml('<a href="javascript:alert(1)">x</a>');
    expect(out.querySelector("a")).toBeNull();
    // the URL survives only as inert data for the copy affordance
    const span = out.querySelector("span.disabled-link")!;
    expect(span.getAttribute("href")).toBeNull();
  });

  it("removes inline style (blocks css url() fetches)", () => {
    const out = sanitizeEmailHtml(
      '<p style="background:url(http://t.test/x)">x</p><style>p{}</style>',
    );
    expect(out.querySelector("[style]")).toBeNull();
    expect(out.querySelector("style")).toBeNull();
  });

  it("preserves benign structure and text", () => {
    const out = sanitizeEmailHtml(
      "<h1>Report</h1><table><tr><td colspan=\"2\">cell</td></tr></table>" +
      "<ul><li>one</li><li>two</li></ul><pre>code</pre>",
    );
    expect(out.querySelector("h1")!.textContent).toBe("Report");
    expect(out.querySelector("td")!.getAttribute("colspan")).toBe("2");
    expect(out.querySelectorAll("li").length).toBe(2);
  });

  it("keeps text of unknown containers while dropping the tag", () => {
    const out = sanitizeEmailHtml("<font color=\"red\">warning</font><main>body</main>");
    expect(out.querySelector("font")).toBeNull();
    expect(out.textContent).toContain("warning");
    expect(out.textContent).toContain("body");
  });

  it("handles deeply malformed markup without throwing", () => {
    const nasty = "<div><p><script><a href='x'" + "<".repeat(50) + "b>".repeat(30);
    expect(() => sanitizeEmailHtml(nasty)).not.toThrow();
  });
});

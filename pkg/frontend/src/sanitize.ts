// Inert rendering of untrusted email HTML.
//
// Invariant: nothing from a rendered body may execute or trigger a
// network fetch. We parse into an inert document (DOMParser never runs
// scripts), walk the tree keeping only a tag allowlist, drop every
// attribute except a small presentational set, and replace anchors with
// disabled spans that carry the target URL for a copy affordance.

const ALLOWED_TAGS = new Set([
  "a", "abbr", "b", "blockquote", "br", "caption", "code", "div", "em",
  "h1", "h2", "h3", "h4", "h5", "h6", "hr", "i", "li", "ol", "p", "pre",
  "q", "s", "small", "span", "strong", "sub", "sup", "table", "tbody",
  "td", "tfoot", "th", "thead", "tr", "u", "ul",
]);

// Presentational only — never URLs, never event handlers.
const ALLOWED_ATTRS = new Set(["colspan", "rowspan"]);

function sanitizeNode(node: Node, doc: Document): Node | null {
  if (node.nodeType === Node.TEXT_NODE) {
    return doc.createTextNode(node.textContent ?? "");
  }
  if (node.nodeType !== Node.ELEMENT_NODE) return null;
  const el = node as Element;
  const tag = el.tagName.toLowerCase();
  if (!ALLOWED_TAGS.has(tag)) {
    // Drop the element entirely (script/style/iframe/img/form/...),
    // but keep readable text of plain containers like <font> or <main>.
    if (["script", "style", "iframe", "object", "embed", "form",
         "template", "noscript"].includes(tag)) {
      return null;
    }
    const frag = doc.createDocumentFragment();
    for (const child of Array.from(el.childNodes)) {
      const kept = sanitizeNode(child, doc);
      if (kept) frag.appendChild(kept);
    }
    return frag;
  }
  if (tag === "a") {
    // Links are disabled: render as a span with the href held in a data
    // attribute so the UI can offer "copy link" without navigation.
    const span = doc.createElement("span");
    span.className = "disabled-link";
    const href = el.getAttribute("href") ?? "";
    if (href) span.setAttribute("data-url", href);
    span.setAttribute("title", "link disabled");
    for (const child of Array.from(el.childNodes)) {
      const kept = sanitizeNode(child, doc);
      if (kept) span.appendChild(kept);
    }
    return span;
  }
  const out = doc.createElement(tag);
  for (const attr of Array.from(el.attributes)) {
    if (ALLOWED_ATTRS.has(attr.name.toLowerCase())) {
      out.setAttribute(attr.name, attr.value);
    }
  }
  for (const child of Array.from(el.childNodes)) {
    const kept = sanitizeNode(child, doc);
    if (kept) out.appendChild(kept);
  }
  return out;
}

/**
 * Returns a detached element containing an inert rendering of the email
 * HTML. Safe to append to the live document: contains no script, style,
 * frame, media, form, URL-bearing attribute, or event handler.
 */
export function sanitizeEmailHtml(html: string): HTMLElement {
  const parsed = new DOMParser().parseFromString(html, "text/html");
  const container = document.createElement("div");
  container.className = "email-html-sandbox";
  for (const child of Array.from(parsed.body.childNodes)) {
    const kept = sanitizeNode(child, document);
    if (kept) container.appendChild(kept);
  }
  return container;
}

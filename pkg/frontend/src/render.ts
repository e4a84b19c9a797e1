// Small DOM helpers shared by the views. Text always goes through
// textContent — never innerHTML — so email-derived strings cannot
// inject markup.

export function el(
  tag: string,
  attrs: Record<string, string> = {},
  children: (Node | string)[] = [],
): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  for (const child of children) {
    node.appendChild(typeof child === "string" ? document.createTextNode(child) : child);
  }
  return node;
}

export function verdictBadge(classification: string | null, score?: number): HTMLElement {
  const label = classification ?? "pending";
  const badge = el("span", { class: `badge badge-${label}` }, [label]);
  if (score !== undefined) badge.appendChild(document.createTextNode(` ${score}`));
  return badge;
}

export function clear(node: HTMLElement): void {
  while (node.firstChild) node.removeChild(node.firstChild);
}

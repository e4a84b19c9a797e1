// Query-string assembly: combines the free-text query box with the
// facet chips, and builds IOC pivot queries. All verdict derivation
// stays server-side; this module only builds query text.

export interface Facets {
  verdict: "" | "benign" | "spam" | "malicious";
  hasAttachment: boolean;
}

export function buildQuery(text: string, facets: Facets): string {
  const parts: string[] = [];
  const trimmed = text.trim();
  if (trimmed) parts.push(trimmed);
  if (facets.verdict) parts.push(`verdict:${facets.verdict}`);
  if (facets.hasAttachment) parts.push("has:attachment");
  return parts.join(" AND ");
}

/** Pivot from a link host seen in a record to everywhere it may appear. */
export function pivotHostQuery(host: string): string {
  return `body:${host} OR attachment:${host}`;
}

/** Pivot from a sender address to all mail from it. */
export function pivotSenderQuery(address: string): string {
  return `from:${address}`;
}

export function searchUrl(query: string, cursor?: string | null): string {
  const params = new URLSearchParams();
  params.set("q", query);
  if (cursor) params.set("cursor", cursor);
  return `/v1/emails?${params.toString()}`;
}

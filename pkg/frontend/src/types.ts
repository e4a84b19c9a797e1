// Mirrors the record schema served by the API (docs/record-schema.md).

export interface Address {
  display_name: string | null;
  local_part: string;
  domain: string;
}

export interface Link {
  url: string;
  scheme: string;
  host: string;
  origin: "html_href" | "plain_text" | "qr_code";
  display_text: string | null;
  display_mismatch: boolean;
}

export interface AttachmentRef {
  index: number;
  filename: string | null;
  declared_mime: string;
  sha256: string;
  size: number;
}

export interface ParsedEmail {
  email_id: string;
  headers: [string, string, string][];
  from: Address[];
  to: Address[];
  cc: Address[];
  reply_to: Address[];
  subject: string;
  date: string | null;
  message_id: string | null;
  body_text: string | null;
  body_html: string | null;
  links: Link[];
  attachments: AttachmentRef[];
  parse_warnings: string[];
  encoded_word_count: number;
}

export interface Flag {
  source: string;
  severity: number;
  reason: string;
  evidence: string;
  target: string;
  created_at: string;
}

export interface Verdict {
  classification: "benign" | "spam" | "malicious";
  threat_score: number;
  disposition: "delivered" | "quarantined" | "blocked";
  contributing: [number, number][];
}

export interface IngestReceipt {
  email_id: string;
  source: string;
  received_at: string;
  duplicate: boolean;
  raw_size: number;
}

export interface EmailRecord {
  email: ParsedEmail;
  ingest: IngestReceipt;
  flags: Flag[];
  attachment_analyses: unknown[];
  verdict: Verdict | null;
  direction: string;
}

export interface SearchHit {
  email_id: string;
  snippet: string;
  score: number;
  verdict: { classification: string; threat_score: number; disposition: string } | null;
  received_at: string;
  subject: string;
}

export interface SearchResult {
  hits: SearchHit[];
  total_count: number;
  next_cursor: string | null;
}

export interface FeedEvent {
  ts: string;
  email_id: string;
  kind: "flag" | "verdict";
  [key: string]: unknown;
}

export interface ApiError {
  status: number;
  code: string;
  message: string;
}

// Typed client for the review service REST API. The server is the source of
// truth; every mutation goes through postDecision and nothing is kept
// client-side only.

export type FlagStatus = 'pending' | 'kept' | 'modified' | 'removed';

export interface Stats {
  pending: number;
  kept: number;
  modified: number;
  removed: number;
}

export interface FlagSummary {
  flag_id: string;
  item_id: string;
  issue_kind: string;
  rationale: string;
  status: FlagStatus;
}

export interface EvidenceEntry {
  page_id: string;
  snippet: string;
  relevance: number;
}

export interface BenchmarkItem {
  item_id: string;
  question: string;
  gold_answer: string;
  accepted_answers: string[];
  answer_kind: string;
  status: string;
  trail: Record<string, unknown>[];
}

export interface FlagDetail extends FlagSummary {
  evidence: EvidenceEntry[];
  item: BenchmarkItem;
  page_image_urls: string[];
  decisions: Record<string, unknown>[];
}

export interface FlagListResponse {
  flags: FlagSummary[];
  stats: Stats;
}

export type Action = 'keep' | 'modify' | 'remove';

export interface DecisionBody {
  action: Action;
  reviewer: string;
  new_question?: string;
  new_answer?: string;
  added_accepted_answers?: string[];
}

export interface DecisionResponse {
  ok: boolean;
  flag_id: string;
  stats: Stats;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function getJson<T>(path: string): Promise<T> {
  const res = await fetch(path, { headers: { Accept: 'application/json' } });
  if (!res.ok) {
    throw new ApiError(res.status, await res.text());
  }
  return (await res.json()) as T;
}

export function fetchFlags(status: FlagStatus | 'all' = 'all'): Promise<FlagListResponse> {
  return getJson<FlagListResponse>(`/api/flags?status=${encodeURIComponent(status)}`);
}

export function fetchFlag(flagId: string): Promise<FlagDetail> {
  return getJson<FlagDetail>(`/api/flags/${encodeURIComponent(flagId)}`);
}

export function fetchStats(): Promise<Stats> {
  return getJson<Stats>('/api/stats');
}

export async function postDecision(flagId: string, body: DecisionBody): Promise<DecisionResponse> {
  const res = await fetch(`/api/flags/${encodeURIComponent(flagId)}/decision`, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json', Accept: 'application/json' },
    body: JSON.stringify(body),
  });
  if (!res.ok) {
    throw new ApiError(res.status, await res.text());
  }
  return (await res.json()) as DecisionResponse;
}

export const exportUrl = '/api/export';

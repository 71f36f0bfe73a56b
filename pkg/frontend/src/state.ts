// Triage queue state, kept separate from the DOM so it is unit-testable.
// Invariants: unsaved edits never auto-submit, a failed submission loses
// nothing, and the optimistic pending count is reconciled with the stats the
// server returns on every decision.

import type { Action, DecisionBody, FlagStatus, FlagSummary, Stats } from './api.js';

export interface Edits {
  new_question: string;
  new_answer: string;
  added_accepted_answers: string;
}

export const EMPTY_EDITS: Edits = {
  new_question: '',
  new_answer: '',
  added_accepted_answers: '',
};

export interface QueueState {
  flags: FlagSummary[];
  stats: Stats | null;
  statsError: boolean;
  filter: FlagStatus | 'all';
  currentId: string | null;
  edits: Edits;
  banner: string | null;
}

export function initialState(): QueueState {
  return {
    flags: [],
    stats: null,
    statsError: false,
    filter: 'pending',
    currentId: null,
    edits: { ...EMPTY_EDITS },
    banner: null,
  };
}

export function visibleFlags(state: QueueState): FlagSummary[] {
  if (state.filter === 'all') return state.flags;
  return state.flags.filter((f) => f.status === state.filter);
}

export function selectFlag(state: QueueState, flagId: string | null): QueueState {
  // Selecting a new flag discards edits; callers guard when edits are dirty.
  return { ...state, currentId: flagId, edits: { ...EMPTY_EDITS } };
}

export function editsDirty(edits: Edits): boolean {
  return Boolean(edits.new_question || edits.new_answer || edits.added_accepted_answers);
}

/** Null when valid, else the message shown inline. Mirrors the server rule:
 * modify must change at least one field. */
export function validateDecision(action: Action, edits: Edits): string | null {
  if (action === 'modify' && !editsDirty(edits)) {
    return 'Modify needs a new question, a new answer, or added accepted answers.';
  }
  return null;
}

export function decisionBody(action: Action, reviewer: string, edits: Edits): DecisionBody {
  const body: DecisionBody = { action, reviewer };
  if (action === 'modify') {
    if (edits.new_question) body.new_question = edits.new_question;
    if (edits.new_answer) body.new_answer = edits.new_answer;
    const added = edits.added_accepted_answers
      .split(';')
      .map((s) => s.trim())
      .filter(Boolean);
    if (added.length) body.added_accepted_answers = added;
  }
  return body;
}

const STATUS_OF_ACTION: Record<Action, FlagStatus> = {
  keep: 'kept',
  modify: 'modified',
  remove: 'removed',
};

/** Apply a confirmed decision: restamp the flag's status, adopt the server's
 * stats (reconciling the optimistic decrement), and advance to the next
 * pending flag. */
export function applyDecision(
  state: QueueState,
  flagId: string,
  action: Action,
  serverStats: Stats,
): QueueState {
  const flags = state.flags.map((f) =>
    f.flag_id === flagId ? { ...f, status: STATUS_OF_ACTION[action] } : f,
  );
  const next = nextPendingId(flags, flagId);
  return {
    ...state,
    flags,
    stats: serverStats,
    statsError: false,
    currentId: next,
    edits: { ...EMPTY_EDITS },
    banner: null,
  };
}

export function nextPendingId(flags: FlagSummary[], after: string | null): string | null {
  const pending = flags.filter((f) => f.status === 'pending');
  if (pending.length === 0) return null;
  if (after !== null) {
    const order = flags.map((f) => f.flag_id);
    const start = order.indexOf(after);
    for (let step = 1; step <= order.length; step++) {
      const candidate = flags[(start + step) % order.length];
      if (candidate && candidate.status === 'pending') return candidate.flag_id;
    }
  }
  const first = pending[0];
  return first ? first.flag_id : null;
}

export function optimisticPending(stats: Stats | null): Stats | null {
  if (!stats) return null;
  return { ...stats, pending: Math.max(0, stats.pending - 1) };
}

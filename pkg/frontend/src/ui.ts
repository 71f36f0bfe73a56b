// DOM layer: queue list with issue badges and stats, evidence-first flag
// view with lazy page images, decision form, and the k/m/r hotkeys that make
// keyboard-only triage possible.

import {
  ApiError,
  fetchFlag,
  fetchFlags,
  fetchStats,
  postDecision,
  exportUrl,
  type Action,
  type FlagDetail,
  type FlagStatus,
} from './api.js';
import {
  applyDecision,
  decisionBody,
  editsDirty,
  initialState,
  optimisticPending,
  selectFlag,
  validateDecision,
  visibleFlags,
  type QueueState,
} from './state.js';

let state: QueueState = initialState();
let detail: FlagDetail | null = null;
let reviewer = 'reviewer';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === 'class') node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function root(): HTMLElement {
  const existing = document.getElementById('app');
  if (existing) return existing;
  const node = el('div', { id: 'app' });
  document.body.append(node);
  return node;
}

async function refresh(): Promise<void> {
  try {
    const listing = await fetchFlags('all');
    state = { ...state, flags: listing.flags, banner: null };
  } catch (err) {
    state = { ...state, banner: `Service unreachable: ${String(err)}` };
    render();
    return;
  }
  try {
    state = { ...state, stats: await fetchStats(), statsError: false };
  } catch {
    // The list still renders; stats show an error badge.
    state = { ...state, statsError: true };
  }
  if (state.currentId === null) {
    const pending = state.flags.find((f) => f.status === 'pending');
    if (pending) await open(pending.flag_id);
  }
  render();
}

async function open(flagId: string): Promise<void> {
  if (editsDirty(state.edits) && state.currentId !== flagId) {
    if (!window.confirm('Discard unsaved edits?')) return;
  }
  state = selectFlag(state, flagId);
  try {
    detail = await fetchFlag(flagId);
  } catch (err) {
    detail = null;
    state = { ...state, banner: `Failed to load flag: ${String(err)}` };
  }
  render();
}

async function submit(action: Action): Promise<void> {
  if (!state.currentId) return;
  const problem = validateDecision(action, state.edits);
  if (problem) {
    state = { ...state, banner: problem };
    render();
    return;
  }
  const flagId = state.currentId;
  // Optimistic pending decrement; reconciled with the server's stats below.
  state = { ...state, stats: optimisticPending(state.stats) };
  render();
  try {
    const response = await postDecision(flagId, decisionBody(action, reviewer, state.edits));
    state = applyDecision(state, flagId, action, response.stats);
    detail = null;
    if (state.currentId) await open(state.currentId);
  } catch (err) {
    // Nothing is lost: edits stay, stats re-fetched on the next refresh.
    const detailText = err instanceof ApiError ? err.message : String(err);
    state = { ...state, banner: `Submission failed (retry with the same edits): ${detailText}` };
  }
  render();
}

function onKey(event: KeyboardEvent): void {
  const target = event.target as HTMLElement | null;
  if (target && (target.tagName === 'INPUT' || target.tagName === 'TEXTAREA')) return;
  if (event.key === 'k') void submit('keep');
  if (event.key === 'm') {
    const field = document.getElementById('edit-question') as HTMLInputElement | null;
    field?.focus();
  }
  if (event.key === 'r') void submit('remove');
}

function statsBar(): HTMLElement {
  if (state.statsError) {
    return el('div', { class: 'stats error' }, 'stats unavailable');
  }
  if (!state.stats) return el('div', { class: 'stats' }, 'loading stats…');
  const s = state.stats;
  return el(
    'div',
    { class: 'stats' },
    `pending ${s.pending} · kept ${s.kept} · modified ${s.modified} · removed ${s.removed}`,
  );
}

function queuePane(): HTMLElement {
  const list = el('ul', { class: 'queue' });
  for (const flag of visibleFlags(state)) {
    const badge = el('span', { class: `badge ${flag.issue_kind}` }, flag.issue_kind);
    const entry = el(
      'li',
      { class: flag.flag_id === state.currentId ? 'selected' : '' },
      badge,
      ` ${flag.item_id} `,
      el('small', {}, flag.status),
    );
    entry.addEventListener('click', () => void open(flag.flag_id));
    list.append(entry);
  }
  const filter = el('select', { id: 'filter' });
  for (const value of ['pending', 'kept', 'modified', 'removed', 'all']) {
    const option = el('option', { value }, value);
    if (value === state.filter) option.setAttribute('selected', 'selected');
    filter.append(option);
  }
  filter.addEventListener('change', () => {
    state = { ...state, filter: (filter as HTMLSelectElement).value as FlagStatus | 'all' };
    render();
  });
  return el(
    'section',
    { class: 'pane queue-pane' },
    el('h2', {}, 'Flag queue'),
    statsBar(),
    el('label', {}, 'filter: ', filter),
    list,
    el('a', { href: exportUrl, download: 'corrected-benchmark.jsonl' }, 'Download corrected export'),
  );
}

function bindEdit(id: string, key: 'new_question' | 'new_answer' | 'added_accepted_answers',
                  value: string, placeholder: string): HTMLElement {
  const input = el('input', { id, placeholder, value }) as HTMLInputElement;
  input.addEventListener('input', () => {
    state = { ...state, edits: { ...state.edits, [key]: input.value } };
  });
  return el('label', { class: 'edit' }, `${placeholder}: `, input);
}

function flagPane(): HTMLElement {
  if (!state.currentId || !detail) {
    return el('section', { class: 'pane' }, el('p', {}, 'Select a flag to review.'));
  }
  const d = detail;
  // Evidence first: reviewers start from the pipeline's rationale.
  const evidence = el('ol', { class: 'evidence' });
  for (const entry of d.evidence) {
    evidence.append(
      el('li', {}, el('b', {}, `[${entry.relevance}] page ${entry.page_id}: `), entry.snippet),
    );
  }
  const images = el('div', { class: 'pages' });
  for (const url of d.page_image_urls) {
    images.append(el('img', { src: url, loading: 'lazy', alt: 'page image' }));
  }
  const buttons = el('div', { class: 'actions' });
  for (const action of ['keep', 'modify', 'remove'] as Action[]) {
    const button = el('button', { 'data-action': action }, `${action} (${action[0]})`);
    button.addEventListener('click', () => void submit(action));
    buttons.append(button);
  }
  return el(
    'section',
    { class: 'pane flag-pane' },
    el('h2', {}, `${d.flag_id} — ${d.issue_kind}`),
    el('p', { class: 'rationale' }, d.rationale || '(no rationale)'),
    el('h3', {}, 'Item'),
    el('p', {}, el('b', {}, 'Q: '), d.item.question),
    el('p', {}, el('b', {}, 'A: '), d.item.gold_answer),
    el('p', {}, el('b', {}, 'accepted: '), d.item.accepted_answers.join(' | ')),
    el('h3', {}, 'Evidence'),
    evidence,
    el('h3', {}, 'Edits (for modify)'),
    bindEdit('edit-question', 'new_question', state.edits.new_question, 'new question'),
    bindEdit('edit-answer', 'new_answer', state.edits.new_answer, 'new answer'),
    bindEdit('edit-accepted', 'added_accepted_answers', state.edits.added_accepted_answers,
             'added accepted answers (semicolon-separated)'),
    buttons,
    el('h3', {}, 'Page images'),
    images,
  );
}

export function render(): void {
  const app = root();
  app.replaceChildren();
  if (state.banner) {
    app.append(el('div', { class: 'banner' }, state.banner));
  }
  app.append(el('main', { class: 'layout' }, queuePane(), flagPane()));
}

export function boot(reviewerName?: string): void {
  if (reviewerName) reviewer = reviewerName;
  document.addEventListener('keydown', onKey);
  void refresh();
}

"""Synthetic SFT pipelines: question generation, context assembly, and
answer generation.

Question side: a Magpie-style baseline (page in, completion out), single-page
generation with sampled archetypes and a varying candidate count to avoid
mode averaging, and multi-page generation filtered so that no single page
answers the question. Answer side: plain distillation (full context, minimal
prompting) and a recursive pipeline that extracts per-page evidence with a
numeric relevance, ranks pages, and answers from the top-k pages or their
evidence. A quality filter decomposes answers into assertions and checks
support. All pipelines are deterministic given (corpus, seed, mock client).
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass

from .client import (
    BaseClient,
    ChatRequest,
    DEFAULT_SYSTEM_PROMPT,
    GenerationError,
    image_item,
    message,
    text_item,
)
from .corpus import Corpus, NeighborIndex, Page, neighbor_topk
from .records import TrainingExample, stable_id
from .templates import TemplateSet, DEFAULT_TEMPLATES
from .tokens import TokenBudget, estimate_text_tokens, fit_resolution, sft_budget

QUESTION_PIPELINES = ("magpie", "single_page", "multi_page", "unanswerable")

CONTEXT_STRATEGIES = (
    "adjacent_range", "whole_document", "hard_negative",
    "distractor_short", "adjacent_short", "hn_short",
)

#: Total pages for the *_short strategies (inclusive bounds).
SHORT_CONTEXT_RANGE = (2, 5)

#: Candidate-count ceiling for single-page question sampling.
DEFAULT_N_MAX = 5

#: Question archetypes; entry zero is the workhorse: hard questions with a
#: short single-correct answer, reasoning requested before the answer.
DEFAULT_ARCHETYPES = (
    "Make it a difficult question with a short, verifiable answer — a single "
    "correct number, string, list, or yes/no, not something open-ended or "
    "debatable — and ask for the reasoning before the answer.",
    "Ask about a specific figure, table, or chart on the page.",
    "Ask a question whose answer requires comparing two values mentioned on the page.",
    "Ask for an exact quantity, date, or name stated on the page.",
)


class SftBuildError(ValueError):
    """Pipeline preconditions violated (context too small, no neighbors...)."""


@dataclass
class Question:
    text: str
    pipeline: str
    source_page_ids: list[str]
    archetype: str | None = None
    kept: bool = True

    def __post_init__(self):
        if self.pipeline == "multi_page" and len(self.source_page_ids) < 2:
            raise SftBuildError("multi-page questions need >= 2 source pages")
        if self.kept and not self.text:
            raise SftBuildError("kept question has empty text")


@dataclass
class AssembledContext:
    strategy: str
    pages: list[Page]          # presentation order
    origin: list[bool]         # parallel: question page vs filler

    def __post_init__(self):
        if len(self.pages) != len(self.origin):
            raise SftBuildError("pages and origin marks must align")

    @property
    def page_ids(self) -> list[str]:
        return [p.page_id for p in self.pages]

    @property
    def origin_page_ids(self) -> list[str]:
        return [p.page_id for p, o in zip(self.pages, self.origin) if o]


@dataclass
class PageEvidence:
    page_id: str
    evidence: str
    relevance: float
    degraded: bool = False


@dataclass
class AnswerTrace:
    mode: str                       # visual_pages | text_evidence
    pages: list[PageEvidence]       # presentation order
    ranked: list[str]               # page_ids, relevance desc / position asc
    selected: list[str]             # prefix of ranked, length <= k
    final_answer: str
    teacher_model: str

    def to_record(self) -> dict:
        return asdict(self)


def parse_numbered_list(text: str) -> list[str]:
    """Lines shaped "1. ...", "2) ..." or "- ..."; falls back to the lone
    non-empty line for single-item completions."""
    items = []
    for line in text.splitlines():
        line = line.strip()
        m = re.match(r"^(?:\d+[.)]|[-*])\s+(.*\S)", line)
        if m:
            items.append(m.group(1))
    if not items:
        nonempty = [l.strip() for l in text.splitlines() if l.strip()]
        if len(nonempty) == 1:
            items = nonempty
    return items


def _extract_json_object(text: str) -> dict | None:
    m = re.search(r"\{.*\}", text, flags=re.S)
    if not m:
        return None
    try:
        obj = json.loads(m.group())
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def parse_evidence(text: str) -> tuple[str, float] | None:
    """{"evidence": str, "relevance": number}; None when unparseable."""
    obj = _extract_json_object(text)
    if not obj or "relevance" not in obj:
        return None
    try:
        relevance = float(obj["relevance"])
    except (TypeError, ValueError):
        return None
    return str(obj.get("evidence", "")), relevance


def parse_yes_no(text: str) -> bool | None:
    m = re.match(r"\s*(yes|no)\b", text, flags=re.I)
    if not m:
        return None
    return m.group(1).lower() == "yes"


def _page_message(pages: list[Page], question: str) -> dict:
    items = [image_item(p.image_ref) for p in pages]
    items.append(text_item(question))
    return message("user", items)


# ---------------------------------------------------------------------------
# Question generation


def magpie_question(page: Page, client: BaseClient, model: str = "teacher") -> Question:
    """The baseline: hand the model a page with nothing beyond the chat
    template; the completion usually is a simulated user question."""
    result = client.complete(ChatRequest(
        model=model,
        messages=[message("user", [image_item(page.image_ref)])],
        request_tag=f"magpie:{page.page_id}",
    ))
    if not result.text.strip():
        raise GenerationError(f"magpie returned empty completion for {page.page_id}")
    return Question(text=result.text.strip(), pipeline="magpie", source_page_ids=[page.page_id])


def generate_sp_questions(
    page: Page,
    client: BaseClient,
    seed: int,
    archetypes: tuple[str, ...] = DEFAULT_ARCHETYPES,
    n_max: int = DEFAULT_N_MAX,
    model: str = "teacher",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> Question:
    """Request n (uniform in 1..n_max) candidate questions under a sampled
    archetype, then keep one uniformly. The varying candidate count is what
    stops the question set collapsing onto the most expected question per
    page. Draw order is fixed: n, archetype, then selection after parsing."""
    rng = random.Random(seed)
    n = rng.randint(1, n_max)
    archetype = archetypes[rng.randrange(len(archetypes))]
    prompt = templates.render("sp_question", n=n, archetype=archetype)
    request = ChatRequest(
        model=model,
        messages=[message("user", [image_item(page.image_ref), text_item(prompt)])],
        request_tag=f"spq:{page.page_id}",
    )

    questions = parse_numbered_list(client.complete(request).text)
    if len(questions) < n:
        questions = parse_numbered_list(client.complete(request).text)
    if len(questions) < n:
        raise GenerationError(
            f"page {page.page_id}: asked for {n} questions, parsed {len(questions)} after retry"
        )
    chosen = questions[rng.randrange(n)]
    return Question(
        text=chosen, pipeline="single_page", source_page_ids=[page.page_id],
        archetype=archetype,
    )


def generate_mp_questions(
    context: AssembledContext,
    client: BaseClient,
    model: str = "teacher",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> list[Question]:
    """Candidate questions that should need evidence from several pages;
    they stay kept=False until filter_multipage passes them."""
    if len(context.pages) < 2:
        raise SftBuildError("multi-page question generation needs >= 2 pages")
    result = client.complete(ChatRequest(
        model=model,
        messages=[_page_message(context.pages, templates.render("mp_question"))],
        request_tag=f"mpq:{'+'.join(context.page_ids)}",
    ))
    texts = parse_numbered_list(result.text)
    if not texts:
        raise GenerationError(f"unparseable multi-page question output: {result.text!r}")
    return [
        Question(text=t, pipeline="multi_page", source_page_ids=context.page_ids, kept=False)
        for t in texts
    ]


def generate_unanswerable_question(
    page: Page,
    client: BaseClient,
    model: str = "teacher",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> Question:
    """Trick questions; marked pipeline=unanswerable so default composition
    can drop them (they also arise naturally in the recursive pipeline)."""
    result = client.complete(ChatRequest(
        model=model,
        messages=[message("user", [image_item(page.image_ref), text_item(templates.render("unanswerable"))])],
        request_tag=f"unanswerable:{page.page_id}",
    ))
    if not result.text.strip():
        raise GenerationError(f"empty unanswerable completion for {page.page_id}")
    return Question(text=result.text.strip(), pipeline="unanswerable", source_page_ids=[page.page_id])


def filter_multipage(
    question: Question,
    pages: list[Page],
    answer_client: BaseClient,
    judge_client: BaseClient,
    answer_model: str = "filter",
    judge_model: str = "judge",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> bool:
    """keep == no single page suffices: a small model answers from each page
    alone, a judge marks each answer fully-and-correctly-answered or not, and
    one yes rejects the question. Unparseable verdicts count as yes — bias
    toward rejection protects the multi-page guarantee."""
    if len(pages) < 2:
        raise SftBuildError("multi-page filter needs >= 2 pages")
    answer_prompt = templates.render("single_page_answer", question=question.text)
    for page in pages:
        answer = answer_client.complete(ChatRequest(
            model=answer_model,
            messages=[message("user", [image_item(page.image_ref), text_item(answer_prompt)])],
            request_tag=f"filter-answer:{page.page_id}",
        )).text
        verdict_text = judge_client.complete(ChatRequest(
            model=judge_model,
            messages=[message("user", [text_item(
                templates.render("judge_answered", question=question.text, answer=answer)
            )])],
            request_tag=f"filter-judge:{page.page_id}",
        )).text
        verdict = parse_yes_no(verdict_text)
        answered = True if verdict is None else verdict
        if answered:
            return False
    return True


# ---------------------------------------------------------------------------
# Context assembly


def _window(pages: tuple[Page, ...], question_index: int, size: int) -> list[Page]:
    n = len(pages)
    if size > n:
        raise SftBuildError(f"window of {size} pages exceeds document of {n}")
    start = min(max(question_index - (size - 1) // 2, 0), n - size)
    return list(pages[start:start + size])


def _sample_neighbors(
    corpus: Corpus,
    index: NeighborIndex,
    page_id: str,
    band: str,
    count: int,
    rng: random.Random,
) -> list[Page]:
    band_size = 32 if band == "within_first_32" else 128
    pool = [
        corpus.page(n.page_id)
        for n in neighbor_topk(index, page_id, band_size, band)
        if _has_page(corpus, n.page_id)
    ]
    if len(pool) < count:
        raise SftBuildError(
            f"page {page_id}: need {count} neighbors in band {band}, have {len(pool)}"
        )
    return [pool[i] for i in sorted(rng.sample(range(len(pool)), count))]


def _has_page(corpus: Corpus, page_id: str) -> bool:
    try:
        corpus.page(page_id)
        return True
    except KeyError:
        return False


def assemble_context(
    strategy: str,
    corpus: Corpus,
    neighbor_index: NeighborIndex | None,
    question_page: Page,
    params: dict | None = None,
    seed: int = 0,
) -> AssembledContext:
    """Build the page context for an SFT example.

    adjacent_range / adjacent_short: contiguous window around the question
    page, document order. whole_document: every page in order. hard_negative /
    hn_short: question page plus neighbors from ranks 1..32. distractor_short:
    question page plus neighbors from ranks 33..128 — similar pages whose
    content should not enter the answer. The *_short variants total 2..5
    pages; negative strategies shuffle presentation order (seeded).
    """
    params = params or {}
    rng = random.Random(seed)
    doc = corpus.document(question_page.doc_id)

    if strategy in ("hard_negative", "distractor_short", "hn_short") and neighbor_index is None:
        raise SftBuildError(f"strategy {strategy} needs a neighbor index")

    if strategy == "adjacent_range":
        size = params.get("size", min(8, doc.page_count))
        pages = _window(doc.pages, question_page.index, size)
    elif strategy == "whole_document":
        pages = list(doc.pages)
    elif strategy == "adjacent_short":
        size = params.get("total_pages", rng.randint(*SHORT_CONTEXT_RANGE))
        pages = _window(doc.pages, question_page.index, size)
    elif strategy == "hard_negative":
        count = params.get("n_negatives", 8)
        negatives = _sample_neighbors(
            corpus, neighbor_index, question_page.page_id, "within_first_32", count, rng)
        pages = [question_page] + negatives
        rng.shuffle(pages)
    elif strategy in ("distractor_short", "hn_short"):
        total = params.get("total_pages", rng.randint(*SHORT_CONTEXT_RANGE))
        if not SHORT_CONTEXT_RANGE[0] <= total <= SHORT_CONTEXT_RANGE[1]:
            raise SftBuildError(f"short context size {total} outside 2..5")
        band = "outside_first_32" if strategy == "distractor_short" else "within_first_32"
        negatives = _sample_neighbors(
            corpus, neighbor_index, question_page.page_id, band, total - 1, rng)
        pages = [question_page] + negatives
        rng.shuffle(pages)
    else:
        raise SftBuildError(f"unknown strategy {strategy!r}")

    origin = [p.page_id == question_page.page_id for p in pages]
    if strategy in ("adjacent_range", "whole_document", "adjacent_short"):
        assert any(origin), "window must contain the question page"
    return AssembledContext(strategy=strategy, pages=pages, origin=origin)


# ---------------------------------------------------------------------------
# Answer generation


def answer_plain(
    context: AssembledContext,
    question: Question,
    teacher_client: BaseClient,
    model: str = "teacher",
    budget: TokenBudget | None = None,
) -> str:
    """Plain distillation: the full page sequence and the question go to the
    teacher under the default system prompt and nothing else; prompting is
    deliberately minimal. Raises DoesNotFitError rather than downsampling
    below the budget's minimum side."""
    budget = budget or sft_budget()
    fit_resolution(len(context.pages), estimate_text_tokens(question.text), budget)
    result = teacher_client.complete(ChatRequest(
        model=model,
        messages=[
            message("system", [text_item(DEFAULT_SYSTEM_PROMPT)]),
            _page_message(context.pages, question.text),
        ],
        request_tag=f"plain:{'+'.join(context.page_ids)}",
    ))
    if not result.text.strip():
        raise GenerationError("teacher returned an empty answer")
    return result.text


def rank_pages(evidence: list[PageEvidence]) -> list[str]:
    """Stable order: relevance descending, presentation position ascending."""
    order = sorted(range(len(evidence)), key=lambda i: (-evidence[i].relevance, i))
    return [evidence[i].page_id for i in order]


def answer_recursive(
    context: AssembledContext,
    question: Question,
    extract_client: BaseClient,
    answer_client: BaseClient,
    k: int = 3,
    mode: str = "visual_pages",
    extract_model: str = "extractor",
    answer_model: str = "teacher",
    max_in_flight: int = 4,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> AnswerTrace:
    """Per-page evidence extraction with a 0..10 relevance score, ranking,
    and answering from the top-k pages (visual_pages) or their extracted
    evidence strings (text_evidence). Unparseable extractions degrade to
    relevance 0 with empty evidence and are recorded as such."""
    if k < 1:
        raise SftBuildError("k must be >= 1")
    if mode not in ("visual_pages", "text_evidence"):
        raise SftBuildError(f"unknown mode {mode!r}")

    prompt = templates.render("extract_evidence", question=question.text)
    requests = [
        ChatRequest(
            model=extract_model,
            messages=[message("user", [image_item(p.image_ref), text_item(prompt)])],
            request_tag=f"extract:{p.page_id}",
        )
        for p in context.pages
    ]
    results = extract_client.complete_batch(requests, max_in_flight=max_in_flight)

    evidence: list[PageEvidence] = []
    for page, result in zip(context.pages, results):
        parsed = None if result.finish_reason == "error" else parse_evidence(result.text)
        if parsed is None:
            evidence.append(PageEvidence(page.page_id, "", 0.0, degraded=True))
        else:
            text, relevance = parsed
            evidence.append(PageEvidence(page.page_id, text, max(0.0, min(10.0, relevance))))

    ranked = rank_pages(evidence)
    selected = ranked[:k]
    by_id = {e.page_id: e for e in evidence}
    page_by_id = {p.page_id: p for p in context.pages}

    if mode == "visual_pages":
        answer_message = _page_message([page_by_id[pid] for pid in selected], question.text)
    else:
        lines = [f"Evidence from page {pid}: {by_id[pid].evidence}" for pid in selected]
        lines.append(question.text)
        answer_message = message("user", [text_item("\n".join(lines))])

    final = answer_client.complete(ChatRequest(
        model=answer_model,
        messages=[message("system", [text_item(DEFAULT_SYSTEM_PROMPT)]), answer_message],
        request_tag=f"recursive-answer:{'+'.join(selected)}",
    ))
    if not final.text.strip():
        raise GenerationError("recursive pipeline produced an empty final answer")

    return AnswerTrace(
        mode=mode, pages=evidence, ranked=ranked, selected=selected,
        final_answer=final.text, teacher_model=answer_model,
    )


@dataclass
class QualityVerdict:
    supported: bool
    assertions: list[str]
    assertion_verdicts: list[bool]
    evidence: list[PageEvidence]

    @property
    def failing(self) -> list[int]:
        return [i + 1 for i, ok in enumerate(self.assertion_verdicts) if not ok]


def quality_check(
    answer: str,
    context: AssembledContext,
    client: BaseClient,
    model: str = "checker",
    top_k: int = 3,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> QualityVerdict:
    """Decompose the answer into assertions, collect per-page evidence for
    them, and have a final call decide whether the top pages' evidence
    supports every assertion. Doubling as a training task is possible but
    out of scope here; this is the data filter."""
    if not answer.strip():
        raise SftBuildError("cannot quality-check an empty answer")

    decomposition = client.complete(ChatRequest(
        model=model,
        messages=[message("user", [text_item(templates.render("decompose_assertions", answer=answer))])],
        request_tag="quality-decompose",
    ))
    assertions = parse_numbered_list(decomposition.text)
    if not assertions:
        raise GenerationError("assertion decomposition produced no assertions")
    assertions_block = "\n".join(f"{i}. {a}" for i, a in enumerate(assertions, start=1))

    evidence: list[PageEvidence] = []
    prompt = templates.render("quality_extract", assertions=assertions_block)
    for page in context.pages:
        result = client.complete(ChatRequest(
            model=model,
            messages=[message("user", [image_item(page.image_ref), text_item(prompt)])],
            request_tag=f"quality-extract:{page.page_id}",
        ))
        parsed = parse_evidence(result.text)
        if parsed is None:
            evidence.append(PageEvidence(page.page_id, "", 0.0, degraded=True))
        else:
            evidence.append(PageEvidence(page.page_id, parsed[0], max(0.0, min(10.0, parsed[1]))))

    ranked = rank_pages(evidence)
    by_id = {e.page_id: e for e in evidence}
    top = [by_id[pid] for pid in ranked[:top_k]]
    evidence_block = "\n".join(f"[page {e.page_id}] {e.evidence}" for e in top)

    check = client.complete(ChatRequest(
        model=model,
        messages=[message("user", [text_item(templates.render(
            "check_assertions", evidence=evidence_block, assertions=assertions_block
        ))])],
        request_tag="quality-check",
    ))
    verdicts = _parse_assertion_verdicts(check.text, len(assertions))
    return QualityVerdict(
        supported=all(verdicts), assertions=assertions,
        assertion_verdicts=verdicts, evidence=evidence,
    )


def _parse_assertion_verdicts(text: str, n: int) -> list[bool]:
    m = re.search(r"\[.*\]", text, flags=re.S)
    verdicts = [False] * n
    if not m:
        return verdicts
    try:
        entries = json.loads(m.group())
    except json.JSONDecodeError:
        return verdicts
    for entry in entries:
        try:
            idx = int(entry["assertion"]) - 1
            if 0 <= idx < n:
                verdicts[idx] = bool(entry["supported"])
        except (KeyError, TypeError, ValueError):
            continue
    return verdicts


# ---------------------------------------------------------------------------
# Example assembly


def build_sft_example(
    context: AssembledContext,
    question: Question,
    answer: str,
    budget: TokenBudget | None = None,
    trace: AnswerTrace | None = None,
    stage: str = "",
) -> TrainingExample:
    budget = budget or sft_budget()
    messages = [_page_message(context.pages, question.text), message("assistant", [text_item(answer)])]
    text_tokens = estimate_text_tokens(question.text) + estimate_text_tokens(answer)
    side = fit_resolution(len(context.pages), text_tokens, budget)
    per_page = (side // budget.patch_size) ** 2
    return TrainingExample(
        example_id=stable_id(question.pipeline, context.page_ids, question.text, prefix="sft-"),
        pipeline=question.pipeline,
        messages=messages,
        page_refs=context.page_ids,
        origin_marks=context.origin_page_ids,
        token_estimate=len(context.pages) * per_page + text_tokens,
        assistant_tokens=estimate_text_tokens(answer),
        stage=stage,
        task_kind="sft",
        trace=trace.to_record() if trace else None,
    )


def compose_examples(examples: list[TrainingExample], include_unanswerable: bool = False) -> list[TrainingExample]:
    """Default composition drops unanswerable-pipeline examples."""
    if include_unanswerable:
        return list(examples)
    return [e for e in examples if e.pipeline != "unanswerable"]


# ---------------------------------------------------------------------------
# Multi-turn


def _first_user_question(example: TrainingExample) -> str:
    for msg in example.messages:
        if msg["role"] == "user":
            texts = [i["text"] for i in msg["content"] if i["type"] == "text"]
            if texts:
                return texts[-1]
    raise SftBuildError(f"example {example.example_id} has no user question")


def _first_assistant_answer(example: TrainingExample) -> str:
    for msg in example.messages:
        if msg["role"] == "assistant":
            texts = [i["text"] for i in msg["content"] if i["type"] == "text"]
            if texts:
                return texts[0]
    raise SftBuildError(f"example {example.example_id} has no assistant answer")


def concat_multiturn(examples: list[TrainingExample]) -> TrainingExample:
    """Concatenate single-turn examples over the same context into one
    conversation; the shared context is emitted once, on the first turn.
    Overlapping contexts merge to the union in first-seen page order."""
    if not examples:
        raise SftBuildError("need at least one example to concatenate")

    page_refs: list[str] = []
    ref_by_id: dict[str, str] = {}
    origin: list[str] = []
    for example in examples:
        for pid, iref in zip(example.page_refs, _image_refs(example)):
            if pid not in ref_by_id:
                ref_by_id[pid] = iref
                page_refs.append(pid)
        for pid in example.origin_marks:
            if pid not in origin:
                origin.append(pid)

    messages = []
    first_items = [image_item(ref_by_id[pid]) for pid in page_refs]
    first_items.append(text_item(_first_user_question(examples[0])))
    messages.append(message("user", first_items))
    messages.append(message("assistant", [text_item(_first_assistant_answer(examples[0]))]))
    for example in examples[1:]:
        messages.append(message("user", [text_item(_first_user_question(example))]))
        messages.append(message("assistant", [text_item(_first_assistant_answer(example))]))

    assistant_tokens = sum(e.assistant_tokens for e in examples)
    return TrainingExample(
        example_id=stable_id("multiturn", [e.example_id for e in examples], prefix="sft-"),
        pipeline="multi_turn",
        messages=messages,
        page_refs=page_refs,
        origin_marks=origin,
        token_estimate=max(e.token_estimate for e in examples) + assistant_tokens,
        assistant_tokens=assistant_tokens,
        task_kind="sft",
    )


def _image_refs(example: TrainingExample) -> list[str]:
    refs = []
    for msg in example.messages:
        for item in msg["content"]:
            if item["type"] == "image" and item["image_ref"] not in refs:
                refs.append(item["image_ref"])
    return refs


def simulate_multiturn(
    context: AssembledContext,
    first_question: Question,
    question_client: BaseClient,
    extract_client: BaseClient,
    answer_client: BaseClient,
    seed: int,
    k: int = 3,
    mode: str = "visual_pages",
    budget: TokenBudget | None = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> TrainingExample:
    """Simulated follow-ups: after each recursive answer, prompt for a deeper
    or new question; 2..4 turns, seeded."""
    rng = random.Random(seed)
    turns = rng.randint(2, 4)

    qa: list[tuple[str, str]] = []
    question = first_question
    for turn in range(turns):
        trace = answer_recursive(
            context, question, extract_client, answer_client, k=k, mode=mode,
            templates=templates,
        )
        qa.append((question.text, trace.final_answer))
        if turn + 1 == turns:
            break
        transcript = "\n".join(f"Q: {q}\nA: {a}" for q, a in qa)
        follow = question_client.complete(ChatRequest(
            model="teacher",
            messages=[_page_message(context.pages, templates.render("followup", transcript=transcript))],
            request_tag=f"followup:{turn + 1}",
        ))
        if not follow.text.strip():
            raise GenerationError("follow-up question generation returned empty text")
        question = Question(
            text=follow.text.strip(), pipeline=first_question.pipeline,
            source_page_ids=context.page_ids
            if first_question.pipeline == "multi_page" else first_question.source_page_ids,
        )

    messages = [_page_message(context.pages, qa[0][0]), message("assistant", [text_item(qa[0][1])])]
    for q, a in qa[1:]:
        messages.append(message("user", [text_item(q)]))
        messages.append(message("assistant", [text_item(a)]))

    budget = budget or sft_budget()
    text_tokens = sum(estimate_text_tokens(q) + estimate_text_tokens(a) for q, a in qa)
    side = fit_resolution(len(context.pages), text_tokens, budget)
    per_page = (side // budget.patch_size) ** 2
    assistant_tokens = sum(estimate_text_tokens(a) for _, a in qa)
    return TrainingExample(
        example_id=stable_id("multiturn-sim", context.page_ids, qa[0][0], seed, prefix="sft-"),
        pipeline="multi_turn",
        messages=messages,
        page_refs=context.page_ids,
        origin_marks=context.origin_page_ids,
        token_estimate=len(context.pages) * per_page + text_tokens,
        assistant_tokens=assistant_tokens,
        task_kind="sft",
    )

"""Continued-pretraining task construction over rendered page corpora.

Four tasks: fill-in-the-middle (predict the parsed text of a removed page),
unshuffle (recover the reading order of a permuted page sequence),
key/position retrieval (reproduce text following an anchor n-gram or at a
described location), and counting (per-page counts plus their sum as a
chain of thought). Builders are pure given (document, seed, client output)
and bound every example by a token budget at construction time.
"""

from __future__ import annotations

import random
import re
from dataclasses import asdict, dataclass, field

from .client import BaseClient, ChatRequest, image_item, message, text_item
from .corpus import Document
from .records import stable_id
from .templates import TemplateSet, DEFAULT_TEMPLATES
from .tokens import TokenBudget, cpt_budget, estimate_text_tokens, fit_resolution

TASK_KINDS = ("fim", "unshuffle", "retrieval_key", "retrieval_position", "counting")

#: Anchor n-gram length range for key retrieval (inclusive).
ANCHOR_NGRAM_RANGE = (5, 8)
#: Answer span length range in words for key retrieval (inclusive).
ANSWER_SPAN_RANGE = (8, 24)

#: Default instance vocabulary for the counting task; config-extensible.
DEFAULT_INSTANCE_LABELS = ("tables", "figures", "headings", "charts")

_IDENTITY_RESAMPLE_CAP = 16


class CptBuildError(ValueError):
    """A task cannot be built from this document (missing text, too short)."""


@dataclass
class CptExample:
    task_kind: str
    context: list[dict]          # interleaved text/image content items
    target: str
    doc_id: str
    page_indices: list[int]      # removed/queried indices, task-dependent
    token_estimate: int
    side_px: int
    seed: int | None = None
    injected_negative_refs: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        record = asdict(self)
        record["example_id"] = self.example_id
        return record

    @property
    def example_id(self) -> str:
        return stable_id(self.doc_id, self.task_kind, self.page_indices, self.seed, prefix="cpt-")


def _context_text(items: list[dict], target: str) -> int:
    text = "\n".join(i["text"] for i in items if i["type"] == "text")
    return estimate_text_tokens(text) + estimate_text_tokens(target)


def _budgeted(doc_pages: int, context: list[dict], target: str, budget: TokenBudget) -> tuple[int, int]:
    """(token_estimate, side) for a context of doc_pages images; raises
    DoesNotFitError via fit_resolution when the example cannot fit."""
    text_tokens = _context_text(context, target)
    side = fit_resolution(max(doc_pages, 1), text_tokens, budget)
    per_page = (side // budget.patch_size) ** 2
    return doc_pages * per_page + text_tokens, side


def build_fim(
    doc: Document,
    removed_index: int,
    parsed_text_of_removed: str | None = None,
    budget: TokenBudget | None = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> CptExample:
    """Remove one page; context is every other page in order plus an
    instruction naming the gap; target is the removed page's parsed text."""
    budget = budget or cpt_budget()
    if not 0 <= removed_index < doc.page_count:
        raise CptBuildError(f"removed_index {removed_index} out of range for {doc.doc_id}")
    removed = doc.pages[removed_index]
    target = parsed_text_of_removed if parsed_text_of_removed is not None else removed.parsed_text
    if not target:
        raise CptBuildError(
            f"page {removed.page_id} has no parsed_text; FIM needs the removed page's text"
        )

    context = [
        image_item(page.image_ref) for page in doc.pages if page.index != removed_index
    ]
    context.append(
        text_item(templates.render("fim", removed_position=removed_index + 1, page_count=doc.page_count))
    )

    tokens, side = _budgeted(doc.page_count - 1, context, target, budget)
    return CptExample(
        task_kind="fim", context=context, target=target, doc_id=doc.doc_id,
        page_indices=[removed_index], token_estimate=tokens, side_px=side,
    )


def build_unshuffle(
    doc: Document,
    seed: int,
    budget: TokenBudget | None = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> CptExample:
    """Present pages in a seeded non-identity permutation, each slot labeled
    "Position i:"; the target lists the presented positions in reading order,
    so applying the target order to the presented pages reconstructs the
    document."""
    budget = budget or cpt_budget()
    n = doc.page_count
    if n < 2:
        raise CptBuildError(f"doc {doc.doc_id}: unshuffle needs at least 2 pages")

    rng = random.Random(seed)
    perm = list(range(n))
    for _ in range(_IDENTITY_RESAMPLE_CAP):
        rng.shuffle(perm)
        if perm != list(range(n)):
            break
    else:
        perm[0], perm[1] = perm[1], perm[0]

    context = []
    for slot, original_index in enumerate(perm, start=1):
        context.append(text_item(f"Position {slot}:"))
        context.append(image_item(doc.pages[original_index].image_ref))
    context.append(text_item(templates.render("unshuffle")))

    # target[i] = 1-based presented slot of original page i
    slot_of = {original: slot for slot, original in enumerate(perm, start=1)}
    target = ", ".join(str(slot_of[i]) for i in range(n))

    tokens, side = _budgeted(n, context, target, budget)
    return CptExample(
        task_kind="unshuffle", context=context, target=target, doc_id=doc.doc_id,
        page_indices=perm, token_estimate=tokens, side_px=side, seed=seed,
    )


def key_retrieval_span(words: list[str], anchor_start: int, ngram_len: int, answer_words: int) -> tuple[str, str]:
    """Pure span arithmetic: (anchor n-gram, following answer span)."""
    if anchor_start < 0 or ngram_len < 1 or answer_words < 1:
        raise ValueError("offsets and lengths must be positive")
    end = anchor_start + ngram_len
    if end + answer_words > len(words):
        raise CptBuildError(
            f"page text too short: need {end + answer_words} words, have {len(words)}"
        )
    anchor = " ".join(words[anchor_start:end])
    answer = " ".join(words[end:end + answer_words])
    return anchor, answer


def split_paragraphs(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


def build_retrieval(
    doc: Document,
    mode: str,
    seed: int,
    budget: TokenBudget | None = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> CptExample:
    """Key mode samples an anchor n-gram (5..8 words) and asks for the span
    that follows it; position mode addresses "page P, paragraph k" and asks
    for that paragraph. The full document is the context either way."""
    budget = budget or cpt_budget()
    if mode not in ("key", "position"):
        raise CptBuildError(f"unknown retrieval mode {mode!r}")
    rng = random.Random(seed)

    if mode == "key":
        min_words = ANCHOR_NGRAM_RANGE[1] + ANSWER_SPAN_RANGE[0]
        eligible = [
            p for p in doc.pages
            if p.parsed_text and len(p.parsed_text.split()) >= min_words
        ]
        if not eligible:
            raise CptBuildError(
                f"doc {doc.doc_id}: no page has enough parsed text for key retrieval"
            )
        page = eligible[rng.randrange(len(eligible))]
        words = page.parsed_text.split()
        ngram_len = rng.randint(*ANCHOR_NGRAM_RANGE)
        max_answer = min(ANSWER_SPAN_RANGE[1], len(words) - ngram_len)
        answer_words = rng.randint(ANSWER_SPAN_RANGE[0], max(ANSWER_SPAN_RANGE[0], max_answer))
        anchor_start = rng.randrange(len(words) - ngram_len - answer_words + 1)
        anchor, target = key_retrieval_span(words, anchor_start, ngram_len, answer_words)
        prompt = templates.render("retrieval_key", anchor=anchor, answer_words=answer_words)
        queried = [page.index]
        task_kind = "retrieval_key"
    else:
        eligible = [p for p in doc.pages if p.parsed_text and split_paragraphs(p.parsed_text)]
        if not eligible:
            raise CptBuildError(
                f"doc {doc.doc_id}: no page has parsed text for position retrieval"
            )
        page = eligible[rng.randrange(len(eligible))]
        paragraphs = split_paragraphs(page.parsed_text)
        k = rng.randrange(len(paragraphs))
        target = paragraphs[k]
        prompt = templates.render("retrieval_position", page=page.index + 1, paragraph=k + 1)
        queried = [page.index]
        task_kind = "retrieval_position"

    context = [image_item(p.image_ref) for p in doc.pages]
    context.append(text_item(prompt))

    tokens, side = _budgeted(doc.page_count, context, target, budget)
    return CptExample(
        task_kind=task_kind, context=context, target=target, doc_id=doc.doc_id,
        page_indices=queried, token_estimate=tokens, side_px=side, seed=seed,
    )


def counting_target(per_page_counts: list[int]) -> str:
    lines = [f"Page {i}: {c}" for i, c in enumerate(per_page_counts, start=1)]
    lines.append(f"Total: {sum(per_page_counts)}")
    return "\n".join(lines)


def parse_counting_target(target: str) -> tuple[list[int], int]:
    """Inverse of counting_target, for consistency checks."""
    counts = [int(m) for m in re.findall(r"^Page \d+: (\d+)$", target, flags=re.M)]
    totals = re.findall(r"^Total: (\d+)$", target, flags=re.M)
    if len(totals) != 1:
        raise ValueError("target does not contain exactly one total line")
    return counts, int(totals[0])


def build_counting(
    doc: Document,
    per_page_counts: list[int],
    instance_label: str,
    budget: TokenBudget | None = None,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> CptExample:
    """Chain-of-thought counting: the target states each page's count and the
    final sum; per-page counts come from single-page labeling upstream."""
    budget = budget or cpt_budget()
    if len(per_page_counts) != doc.page_count:
        raise CptBuildError(
            f"doc {doc.doc_id}: {len(per_page_counts)} counts for {doc.page_count} pages"
        )
    if any(c < 0 for c in per_page_counts):
        raise CptBuildError("counts must be >= 0")

    target = counting_target(per_page_counts)
    context = [image_item(p.image_ref) for p in doc.pages]
    context.append(text_item(templates.render("counting", instance_label=instance_label)))

    tokens, side = _budgeted(doc.page_count, context, target, budget)
    return CptExample(
        task_kind="counting", context=context, target=target, doc_id=doc.doc_id,
        page_indices=list(range(doc.page_count)), token_estimate=tokens, side_px=side,
    )


def label_page_counts(
    doc: Document,
    instance_label: str,
    client: BaseClient,
    model: str = "labeler",
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> list[int]:
    """One single-page labeling call per page; the completion must contain an
    integer. This is the only model involvement in the counting task."""
    prompt = templates.render("counting_page_label", instance_label=instance_label)
    counts = []
    for page in doc.pages:
        request = ChatRequest(
            model=model,
            messages=[message("user", [text_item(prompt), image_item(page.image_ref)])],
            request_tag=f"count:{page.page_id}",
        )
        result = client.complete(request)
        match = re.search(r"-?\d+", result.text)
        if not match:
            raise CptBuildError(
                f"page {page.page_id}: labeler returned no integer: {result.text!r}"
            )
        value = int(match.group())
        if value < 0:
            raise CptBuildError(f"page {page.page_id}: negative count {value}")
        counts.append(value)
    return counts

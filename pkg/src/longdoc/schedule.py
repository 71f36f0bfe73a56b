"""Stage splitting, curriculum ordering, no-truncation packing, and page-index
injection.

Examples split into a short stage (up to 104 pages) and a long stage
(105..336 pages); anything longer is dropped with a warning, never resized
here. Packing is greedy and order-preserving because the curriculum defines
the order; an example that exceeds the budget on its own is an error — no
sequence is ever truncated. Page-index injection prepends the literal
"Page {i}:" marker before each image, 1-based in presentation order.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field

from .records import TrainingExample
from .tokens import LONG_STAGE_TOKENS_MISTRAL, SHORT_STAGE_TOKENS

logger = logging.getLogger(__name__)

SHORT_MAX_PAGES = 104
LONG_MAX_PAGES = 336

#: Page-count bucket width for the length curriculum.
DEFAULT_BUCKET_PAGES = 16
#: Portion of examples relocated across the whole length-difficulty schedule.
DEFAULT_MIX_FRACTION = 0.1
#: Text-only examples bucket by token_estimate at ~this many tokens per page.
TOKENS_PER_PSEUDOPAGE = 1024

CURRICULA = ("none", "length", "length_difficulty")

#: Heuristic difficulty order, least to most difficult; key and position
#: retrieval share a difficulty class.
TASK_DIFFICULTY = {
    "lc_text": 0,
    "fim": 1,
    "unshuffle": 2,
    "retrieval_key": 3,
    "retrieval_position": 3,
    "counting": 4,
}

_PAGE_MARK = re.compile(r"^Page \d+:\n$")


class PackingError(ValueError):
    """A single example exceeds the pack budget; re-stage or drop it."""


@dataclass
class StagePlan:
    stage: str
    max_pages: int
    pack_budget_tokens: int


SHORT_STAGE = StagePlan("short", SHORT_MAX_PAGES, SHORT_STAGE_TOKENS)
LONG_STAGE = StagePlan("long", LONG_MAX_PAGES, LONG_STAGE_TOKENS_MISTRAL)


@dataclass
class ScheduleItem:
    """The slice of an example the scheduler needs."""
    example_id: str
    page_count: int
    token_estimate: int
    assistant_tokens: int = 0
    task_kind: str = ""

    @classmethod
    def from_example(cls, example: TrainingExample) -> "ScheduleItem":
        return cls(
            example_id=example.example_id,
            page_count=example.page_count,
            token_estimate=example.token_estimate,
            assistant_tokens=example.assistant_tokens,
            task_kind=example.task_kind or example.pipeline,
        )

    @classmethod
    def from_record(cls, record: dict) -> "ScheduleItem":
        return cls(
            example_id=record["example_id"],
            page_count=record.get("page_count", len(record.get("page_refs", []))),
            token_estimate=record.get("token_estimate", 0),
            assistant_tokens=record.get("assistant_tokens", 0),
            task_kind=record.get("task_kind") or record.get("pipeline", ""),
        )


@dataclass
class StageSplit:
    short: list[ScheduleItem] = field(default_factory=list)
    long: list[ScheduleItem] = field(default_factory=list)
    dropped: list[ScheduleItem] = field(default_factory=list)


def split_stages(items: list[ScheduleItem]) -> StageSplit:
    """<=104 pages -> short; 105..336 -> long; >336 -> dropped (warned)."""
    split = StageSplit()
    for item in items:
        if item.page_count <= SHORT_MAX_PAGES:
            split.short.append(item)
        elif item.page_count <= LONG_MAX_PAGES:
            split.long.append(item)
        else:
            logger.warning(
                "dropping %s: %d pages exceeds the long-stage cap of %d",
                item.example_id, item.page_count, LONG_MAX_PAGES,
            )
            split.dropped.append(item)
    return split


def effective_pages(item: ScheduleItem) -> int:
    """Page count for bucketing; text-only examples use token pseudo-pages."""
    if item.page_count > 0:
        return item.page_count
    return item.token_estimate // TOKENS_PER_PSEUDOPAGE


def _length_order(items: list[ScheduleItem], rng: random.Random, bucket_pages: int) -> list[ScheduleItem]:
    buckets: dict[int, list[ScheduleItem]] = {}
    for item in items:
        buckets.setdefault(effective_pages(item) // bucket_pages, []).append(item)
    ordered = []
    for key in sorted(buckets):
        bucket = buckets[key]
        rng.shuffle(bucket)
        ordered.extend(bucket)
    return ordered


def order_curriculum(
    items: list[ScheduleItem],
    kind: str = "none",
    mix_fraction: float = DEFAULT_MIX_FRACTION,
    seed: int = 0,
    bucket_pages: int = DEFAULT_BUCKET_PAGES,
) -> list[ScheduleItem]:
    """none: seeded shuffle. length: page-count buckets ascending, shuffled
    within each bucket. length_difficulty: tasks least-to-most difficult,
    length order within each task, then a seeded mix_fraction of examples
    relocated uniformly across the whole schedule."""
    if kind not in CURRICULA:
        raise ValueError(f"unknown curriculum {kind!r}")
    if not 0.0 <= mix_fraction <= 1.0:
        raise ValueError("mix_fraction must be in [0, 1]")
    rng = random.Random(seed)
    items = list(items)

    if kind == "none":
        rng.shuffle(items)
        return items

    if kind == "length":
        return _length_order(items, rng, bucket_pages)

    by_task: dict[int, list[ScheduleItem]] = {}
    for item in items:
        if item.task_kind not in TASK_DIFFICULTY:
            raise ValueError(
                f"example {item.example_id}: task_kind {item.task_kind!r} has no difficulty rank"
            )
        by_task.setdefault(TASK_DIFFICULTY[item.task_kind], []).append(item)

    ordered: list[ScheduleItem] = []
    for rank in sorted(by_task):
        ordered.extend(_length_order(by_task[rank], rng, bucket_pages))

    move_count = int(mix_fraction * len(ordered))
    if move_count:
        move_indices = sorted(rng.sample(range(len(ordered)), move_count), reverse=True)
        moved = [ordered.pop(i) for i in move_indices]
        for item in moved:
            ordered.insert(rng.randrange(len(ordered) + 1), item)
    return ordered


@dataclass
class PackedSequence:
    pack_id: int
    example_ids: list[str]
    total_tokens: int
    assistant_tokens: int
    budget: int
    stage: str = ""

    def to_record(self) -> dict:
        return {
            "pack_id": self.pack_id,
            "example_ids": self.example_ids,
            "total_tokens": self.total_tokens,
            "assistant_tokens": self.assistant_tokens,
            "budget": self.budget,
            "stage": self.stage,
        }


def pack_sequences(items: list[ScheduleItem], budget: int, stage: str = "") -> list[PackedSequence]:
    """Greedy order-preserving packing: append while the example fits, else
    close the pack and open a new one. Examples are never split and never
    reordered; utilization loss against best-fit is accepted because the
    input order is the curriculum."""
    if budget <= 0:
        raise ValueError("budget must be positive")
    for item in items:
        if item.token_estimate > budget:
            raise PackingError(
                f"example {item.example_id} ({item.token_estimate} tokens) exceeds "
                f"the pack budget of {budget}; re-stage or drop it — never truncate"
            )

    packs: list[PackedSequence] = []
    current: list[ScheduleItem] = []
    current_tokens = 0
    for item in items:
        if current and current_tokens + item.token_estimate > budget:
            packs.append(_close_pack(len(packs), current, current_tokens, budget, stage))
            current, current_tokens = [], 0
        current.append(item)
        current_tokens += item.token_estimate
    if current:
        packs.append(_close_pack(len(packs), current, current_tokens, budget, stage))
    return packs


def _close_pack(pack_id: int, items: list[ScheduleItem], total: int, budget: int, stage: str) -> PackedSequence:
    return PackedSequence(
        pack_id=pack_id,
        example_ids=[i.example_id for i in items],
        total_tokens=total,
        assistant_tokens=sum(i.assistant_tokens for i in items),
        budget=budget,
        stage=stage,
    )


def page_index_marker(i: int) -> str:
    return f"Page {i}:\n"


def inject_page_indices(example: TrainingExample) -> TrainingExample:
    """Prepend the literal marker "Page {i}:" + newline before each image,
    numbering 1-based in presentation order across the conversation.
    Idempotent: an image already preceded by a marker is left alone."""
    if not any(
        item["type"] == "image" for msg in example.messages for item in msg["content"]
    ):
        raise ValueError(f"example {example.example_id} has no image items")

    counter = 0
    new_messages = []
    for msg in example.messages:
        items: list[dict] = []
        for item in msg["content"]:
            if item["type"] == "image":
                counter += 1
                prev = items[-1] if items else None
                already = (
                    prev is not None
                    and prev["type"] == "text"
                    and _PAGE_MARK.match(prev["text"]) is not None
                )
                if not already:
                    items.append({"type": "text", "text": page_index_marker(counter)})
            items.append(dict(item))
        new_messages.append({"role": msg["role"], "content": items})

    return TrainingExample(
        example_id=example.example_id,
        pipeline=example.pipeline,
        messages=new_messages,
        page_refs=example.page_refs,
        origin_marks=example.origin_marks,
        token_estimate=example.token_estimate,
        assistant_tokens=example.assistant_tokens,
        stage=example.stage,
        task_kind=example.task_kind,
        trace=example.trace,
    )

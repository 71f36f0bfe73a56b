"""Benchmark flag-and-correct workflow.

The evidence-extraction pipeline is re-aimed at auditing: per-page evidence is
collected against an item's (question, gold answer) and a verdict call
classifies the inconsistency — wrong document, underspecified wording, typo,
incorrect answer, or ok. Humans then triage each flag: keep, modify, or
remove. Decisions append to a JSONL log that replays deterministically, so the
exported corrected benchmark is a pure function of items + log. Auditability
of benchmark edits is the point.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .client import BaseClient, ChatRequest, image_item, message, text_item
from .corpus import Document
from .records import canonical_json, read_jsonl
from .sft import PageEvidence, parse_evidence, rank_pages
from .templates import TemplateSet, DEFAULT_TEMPLATES

ISSUE_KINDS = ("document_mismatch", "underspecified", "typo", "incorrect_answer", "ok")
ACTIONS = ("keep", "modify", "remove")
ANSWER_KINDS = ("value", "list", "not_answerable", "other")

#: Equivalent phrasings accepted for unanswerable items, gated by answer_kind.
DEFAULT_EXPANSIONS = {
    "not_answerable": ["Not answerable", "None", "0", "No one"],
}

#: Provenance note carried on exports: counts reported for the corrected
#: benchmark release this workflow reproduces.
UPSTREAM_PROVENANCE = {"flagged": 342, "modified": 251, "removed": 16}


class FlaggingError(ValueError):
    pass


@dataclass
class BenchmarkItem:
    item_id: str
    question: str
    gold_answer: str
    doc_id: str
    accepted_answers: list[str] = field(default_factory=list)
    answer_kind: str = "value"
    status: str = "active"
    page_images: list[str] = field(default_factory=list)
    trail: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.answer_kind not in ANSWER_KINDS:
            raise FlaggingError(f"unknown answer_kind {self.answer_kind!r}")
        if self.gold_answer not in self.accepted_answers:
            self.accepted_answers = [self.gold_answer] + list(self.accepted_answers)

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> "BenchmarkItem":
        return cls(
            item_id=record["item_id"],
            question=record["question"],
            gold_answer=record["gold_answer"],
            doc_id=record["doc_id"],
            accepted_answers=list(record.get("accepted_answers", [])),
            answer_kind=record.get("answer_kind", "value"),
            status=record.get("status", "active"),
            page_images=list(record.get("page_images", [])),
            trail=list(record.get("trail", [])),
        )


@dataclass
class FlagReport:
    item_id: str
    issue_kind: str
    rationale: str
    evidence: list[dict] = field(default_factory=list)
    created_by: str = ""
    flag_id: str = ""

    def __post_init__(self):
        if self.issue_kind not in ISSUE_KINDS:
            raise FlaggingError(f"unknown issue_kind {self.issue_kind!r}")
        if self.issue_kind != "ok" and not self.rationale:
            raise FlaggingError("non-ok flags need a rationale")
        if not self.flag_id:
            self.flag_id = f"flag-{self.item_id}"

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> "FlagReport":
        return cls(
            item_id=record["item_id"],
            issue_kind=record["issue_kind"],
            rationale=record.get("rationale", ""),
            evidence=list(record.get("evidence", [])),
            created_by=record.get("created_by", ""),
            flag_id=record.get("flag_id", ""),
        )


@dataclass
class Decision:
    flag_id: str
    action: str
    reviewer: str
    new_question: str | None = None
    new_answer: str | None = None
    added_accepted_answers: list[str] = field(default_factory=list)
    timestamp: float = 0.0

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise FlaggingError(f"unknown action {self.action!r}")
        if self.action == "modify" and not (
            self.new_question or self.new_answer or self.added_accepted_answers
        ):
            raise FlaggingError("modify decisions must change something")

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, record: dict) -> "Decision":
        return cls(
            flag_id=record["flag_id"],
            action=record["action"],
            reviewer=record.get("reviewer", ""),
            new_question=record.get("new_question"),
            new_answer=record.get("new_answer"),
            added_accepted_answers=list(record.get("added_accepted_answers", [])),
            timestamp=record.get("timestamp", 0.0),
        )


def flag_item(
    item: BenchmarkItem,
    document: Document,
    extract_client: BaseClient,
    verdict_client: BaseClient,
    extract_model: str = "extractor",
    verdict_model: str = "judge",
    run_id: str = "",
    top_k: int = 3,
    templates: TemplateSet = DEFAULT_TEMPLATES,
) -> FlagReport:
    """Audit one item against its document: per-page evidence extraction
    against (question, gold answer), then a verdict call over the top
    evidence. An unparseable verdict flags the item as underspecified so a
    human looks at it rather than letting it pass silently."""
    prompt = templates.render("flag_extract", question=item.question, gold_answer=item.gold_answer)
    evidence: list[PageEvidence] = []
    for page in document.pages:
        result = extract_client.complete(ChatRequest(
            model=extract_model,
            messages=[message("user", [image_item(page.image_ref), text_item(prompt)])],
            request_tag=f"flag-extract:{item.item_id}:{page.page_id}",
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

    verdict = verdict_client.complete(ChatRequest(
        model=verdict_model,
        messages=[message("user", [text_item(templates.render(
            "flag_verdict", question=item.question, gold_answer=item.gold_answer,
            evidence=evidence_block,
        ))])],
        request_tag=f"flag-verdict:{item.item_id}",
    ))
    issue, rationale = _parse_verdict(verdict.text)
    return FlagReport(
        item_id=item.item_id,
        issue_kind=issue,
        rationale=rationale,
        evidence=[
            {"page_id": pid, "snippet": by_id[pid].evidence, "relevance": by_id[pid].relevance}
            for pid in ranked
        ],
        created_by=run_id,
    )


def _parse_verdict(text: str) -> tuple[str, str]:
    try:
        start = text.index("{")
        end = text.rindex("}") + 1
        obj = json.loads(text[start:end])
        issue = obj["issue"]
        if issue not in ISSUE_KINDS:
            raise ValueError(issue)
        return issue, str(obj.get("rationale", ""))
    except (ValueError, KeyError, TypeError):
        return "underspecified", "verdict unparseable"


def expand_accepted_answers(
    item: BenchmarkItem,
    expansions: dict[str, list[str]] | None = None,
) -> BenchmarkItem:
    """Add equivalent phrasings for unanswerable items (e.g. None, 0, No one)
    when the expansion config enables them for the item's answer_kind.
    Idempotent; everything else passes through unchanged."""
    if item.status != "active":
        raise FlaggingError(f"item {item.item_id} is not active")
    expansions = DEFAULT_EXPANSIONS if expansions is None else expansions
    additions = expansions.get(item.answer_kind)
    if not additions:
        return item
    merged = list(item.accepted_answers)
    for answer in additions:
        if answer not in merged:
            merged.append(answer)
    return BenchmarkItem(
        item_id=item.item_id, question=item.question, gold_answer=item.gold_answer,
        doc_id=item.doc_id, accepted_answers=merged, answer_kind=item.answer_kind,
        status=item.status, page_images=item.page_images, trail=list(item.trail),
    )


def apply_decision(item: BenchmarkItem, decision: Decision) -> BenchmarkItem:
    """keep: unchanged content, trail entry. modify: replace/extend the given
    fields, originals retained in the trail. remove: status flips to removed.
    Items are never mutated in place."""
    trail_entry: dict = {"action": decision.action, "reviewer": decision.reviewer}
    question = item.question
    gold = item.gold_answer
    accepted = list(item.accepted_answers)
    status = item.status

    if decision.action == "modify":
        if decision.new_question:
            trail_entry["prev_question"] = item.question
            question = decision.new_question
        if decision.new_answer:
            trail_entry["prev_answer"] = item.gold_answer
            gold = decision.new_answer
            if gold not in accepted:
                accepted = [gold] + accepted
        for answer in decision.added_accepted_answers:
            if answer not in accepted:
                accepted.append(answer)
            trail_entry.setdefault("added_accepted_answers", []).append(answer)
    elif decision.action == "remove":
        status = "removed"

    return BenchmarkItem(
        item_id=item.item_id, question=question, gold_answer=gold, doc_id=item.doc_id,
        accepted_answers=accepted, answer_kind=item.answer_kind, status=status,
        page_images=item.page_images, trail=item.trail + [trail_entry],
    )


class ReviewStore:
    """Items + flags + append-only decision log on disk.

    Layout: items.jsonl (pristine benchmark), flags.jsonl, decisions.jsonl
    (append-only). State is rebuilt by replaying the log, so the export is a
    pure function of the files; a concurrent service serializes writes
    through one lock."""

    def __init__(self, root: str | Path, clock=time.time):
        self.root = Path(root)
        self.clock = clock
        self._lock = threading.Lock()
        self._load()

    @property
    def decisions_path(self) -> Path:
        return self.root / "decisions.jsonl"

    def _load(self) -> None:
        items_path = self.root / "items.jsonl"
        flags_path = self.root / "flags.jsonl"
        if not items_path.exists() or not flags_path.exists():
            raise FlaggingError(f"store at {self.root} needs items.jsonl and flags.jsonl")
        try:
            self.base_items = {
                r["item_id"]: BenchmarkItem.from_record(r) for r in read_jsonl(items_path)
            }
            self.flags = {
                f.flag_id: f
                for f in (FlagReport.from_record(r) for r in read_jsonl(flags_path))
            }
        except (KeyError, json.JSONDecodeError) as exc:
            raise FlaggingError(f"store at {self.root} is corrupt: {exc}") from exc
        for flag in self.flags.values():
            if flag.item_id not in self.base_items:
                raise FlaggingError(f"flag {flag.flag_id} references unknown item {flag.item_id}")
        self.decisions: list[Decision] = []
        if self.decisions_path.exists():
            self.decisions = [Decision.from_record(r) for r in read_jsonl(self.decisions_path)]
        self._replay()

    def _replay(self) -> None:
        items = {iid: item for iid, item in self.base_items.items()}
        for decision in self.decisions:
            flag = self.flags.get(decision.flag_id)
            if flag is None:
                raise FlaggingError(f"decision references unknown flag {decision.flag_id}")
            items[flag.item_id] = apply_decision(items[flag.item_id], decision)
        self.items = items

    def record_decision(self, decision: Decision) -> None:
        with self._lock:
            if decision.flag_id not in self.flags:
                raise FlaggingError(f"unknown flag {decision.flag_id}")
            if not decision.timestamp:
                decision.timestamp = self.clock()
            with self.decisions_path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json(decision.to_record()) + "\n")
            self.decisions.append(decision)
            self._replay()

    def latest_action(self, flag_id: str) -> str | None:
        action = None
        for decision in self.decisions:
            if decision.flag_id == flag_id:
                action = decision.action
        return action

    def flags_with_status(self, status: str | None = None) -> list[FlagReport]:
        status_of = {"keep": "kept", "modify": "modified", "remove": "removed"}
        result = []
        for flag_id in sorted(self.flags):
            action = self.latest_action(flag_id)
            flag_status = "pending" if action is None else status_of[action]
            if status in (None, "all") or status == flag_status:
                result.append(self.flags[flag_id])
        return result

    def stats(self) -> dict[str, int]:
        counts = {"pending": 0, "kept": 0, "modified": 0, "removed": 0}
        status_of = {"keep": "kept", "modify": "modified", "remove": "removed"}
        for flag_id in self.flags:
            action = self.latest_action(flag_id)
            counts["pending" if action is None else status_of[action]] += 1
        return counts

    def export_items(self) -> list[BenchmarkItem]:
        """Corrected benchmark: active items only, trails included, sorted by
        item_id for deterministic output."""
        return [
            self.items[iid] for iid in sorted(self.items)
            if self.items[iid].status == "active"
        ]

    def export_jsonl(self) -> str:
        lines = [canonical_json({"provenance_note": UPSTREAM_PROVENANCE})]
        lines += [canonical_json(item.to_record()) for item in self.export_items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def initialize(
        cls,
        root: str | Path,
        items: list[BenchmarkItem],
        flags: list[FlagReport],
        clock=time.time,
    ) -> "ReviewStore":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "items.jsonl").write_text(
            "".join(canonical_json(i.to_record()) + "\n" for i in items), encoding="utf-8")
        (root / "flags.jsonl").write_text(
            "".join(canonical_json(f.to_record()) + "\n" for f in flags), encoding="utf-8")
        return cls(root, clock=clock)

"""Common record types and deterministic JSONL I/O.

All pipeline outputs are JSONL with sorted keys and compact separators so
identical runs are byte-identical. Run manifests capture config hash, seed,
input hashes and counts — and deliberately no wall-clock state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_jsonl(records: Iterable[Any], path: str | Path) -> int:
    count = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            if hasattr(record, "to_record"):
                record = record.to_record()
            fh.write(canonical_json(record) + "\n")
            count += 1
    return count


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.strip()
            if raw:
                yield json.loads(raw)


def stable_id(*parts: Any, prefix: str = "") -> str:
    digest = hashlib.sha1(canonical_json(list(parts)).encode("utf-8")).hexdigest()[:16]
    return f"{prefix}{digest}" if prefix else digest


@dataclass
class TrainingExample:
    """A multimodal conversation plus the provenance the schedulers need."""

    example_id: str
    pipeline: str
    messages: list[dict]
    page_refs: list[str]
    origin_marks: list[str] = field(default_factory=list)
    token_estimate: int = 0
    assistant_tokens: int = 0
    stage: str = ""
    task_kind: str = ""
    trace: dict | None = None

    def to_record(self) -> dict:
        record = asdict(self)
        if record["trace"] is None:
            del record["trace"]
        return record

    @classmethod
    def from_record(cls, record: dict) -> "TrainingExample":
        return cls(
            example_id=record["example_id"],
            pipeline=record["pipeline"],
            messages=record["messages"],
            page_refs=record["page_refs"],
            origin_marks=record.get("origin_marks", []),
            token_estimate=record.get("token_estimate", 0),
            assistant_tokens=record.get("assistant_tokens", 0),
            stage=record.get("stage", ""),
            task_kind=record.get("task_kind", ""),
            trace=record.get("trace"),
        )

    @property
    def page_count(self) -> int:
        return len(self.page_refs)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(
    out_dir: str | Path,
    config: dict,
    seed: int | None,
    inputs: list[str | Path],
    counts: dict[str, int],
) -> Path:
    manifest = {
        "config_hash": hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest(),
        "config": config,
        "seed": seed,
        "input_hashes": {str(p): file_sha256(p) for p in inputs},
        "counts": counts,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "run_manifest.json"
    path.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return path

"""Normalized long-context evaluation aggregation.

Benchmarks score on different scales, so each benchmark column is normalized
by its maximum over the checkpoints present before averaging. Two aggregates:
VA (visual long-context average) over the five document-VQA benchmarks, and
LCA which adds the two text long-context benchmarks. Run-to-run variance is
the population standard deviation over per-run aggregate values. ANLS is the
one metric implemented here; other benchmarks arrive as raw scores.
"""

from __future__ import annotations

import html as html_lib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .records import canonical_json, read_jsonl

DEFAULT_ANLS_TAU = 0.5

#: Aggregate membership. "mmlongbench" resolves to the mean of its 32K/128K
#: split columns when both are present, else whichever exists.
VA_MEMBERS = ("mmlongbenchdoc", "mmlbd_c", "mmlongbench", "dude", "slidevqa")
LCA_MEMBERS = VA_MEMBERS + ("helmet", "longbench_v2")

SPLIT_GROUPS = {
    "mmlongbench": ("mmlongbench_32k", "mmlongbench_128k"),
}


@dataclass(frozen=True)
class BenchmarkInfo:
    metric: str
    va_member: bool
    lca_member: bool


BENCHMARK_REGISTRY = {
    "mmlongbenchdoc": BenchmarkInfo("overall_f1", True, True),
    "mmlbd_c": BenchmarkInfo("overall_f1", True, True),
    "mmlongbench": BenchmarkInfo("task_metric_avg", True, True),
    "mmlongbench_32k": BenchmarkInfo("task_metric_avg", True, True),
    "mmlongbench_128k": BenchmarkInfo("task_metric_avg", True, True),
    "dude": BenchmarkInfo("anls", True, True),
    "slidevqa": BenchmarkInfo("anls", True, True),
    "helmet": BenchmarkInfo("overall_score", False, True),
    "longbench_v2": BenchmarkInfo("overall_accuracy", False, True),
}


class EvalAggError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ANLS


def levenshtein(a: str, b: str) -> int:
    """Edit distance, two-row dynamic program."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ca != cb),
            ))
        prev = cur
    return prev[-1]


def anls(prediction: str, golds: list[str], tau: float = DEFAULT_ANLS_TAU) -> float:
    """Max over golds of the normalized Levenshtein similarity, thresholded:
    NLS = 1 - dist(lower(pred), lower(gold)) / max(len); below tau scores 0.
    Both strings empty scores 1, exactly one empty scores 0."""
    if not golds:
        raise EvalAggError("anls needs at least one gold answer")
    pred = prediction.lower()
    best = 0.0
    for gold in golds:
        g = gold.lower()
        if not pred and not g:
            nls = 1.0
        elif not pred or not g:
            nls = 0.0
        else:
            nls = 1.0 - levenshtein(pred, g) / max(len(pred), len(g))
        if nls >= tau:
            best = max(best, nls)
    return best


# ---------------------------------------------------------------------------
# Score tables


@dataclass
class ScoreTable:
    """rows: checkpoint -> benchmark -> score. Per-run raw scores, when
    present, live in runs: (checkpoint, run_id) -> benchmark -> score and the
    main row holds their mean."""
    rows: dict[str, dict[str, float]] = field(default_factory=dict)
    runs: dict[tuple[str, str], dict[str, float]] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records) -> "ScoreTable":
        per_cell: dict[str, dict[str, list[float]]] = {}
        table = cls()
        for record in records:
            checkpoint = record["checkpoint"]
            benchmark = record["benchmark"]
            score = float(record["score"])
            if score < 0:
                raise EvalAggError(f"negative score for {checkpoint}/{benchmark}")
            per_cell.setdefault(checkpoint, {}).setdefault(benchmark, []).append(score)
            run_id = record.get("run_id")
            if run_id is not None:
                table.runs.setdefault((checkpoint, str(run_id)), {})[benchmark] = score
        for checkpoint, cells in per_cell.items():
            table.rows[checkpoint] = {
                bench: sum(vals) / len(vals) for bench, vals in cells.items()
            }
        return table

    @classmethod
    def from_file(cls, path: str | Path) -> "ScoreTable":
        return cls.from_records(read_jsonl(path))

    def benchmarks(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows.values():
            for bench in row:
                if bench not in seen:
                    seen.append(bench)
        return sorted(seen)


def normalize_scores(table: ScoreTable) -> ScoreTable:
    """normalized(c, b) = 100 * raw(c, b) / max_c raw(c, b). The checkpoint
    holding a column's max lands exactly on 100; already-normalized tables
    are fixed points. Run rows normalize against the same column maxima."""
    maxima: dict[str, float] = {}
    for bench in table.benchmarks():
        column = [row[bench] for row in table.rows.values() if bench in row]
        peak = max(column)
        if peak <= 0:
            raise EvalAggError(f"benchmark {bench!r} has no positive score to normalize by")
        maxima[bench] = peak
    normalized = ScoreTable()
    for checkpoint, row in table.rows.items():
        normalized.rows[checkpoint] = {
            bench: 100.0 * (value / maxima[bench]) for bench, value in row.items()
        }
    for key, row in table.runs.items():
        normalized.runs[key] = {
            bench: 100.0 * (value / maxima[bench])
            for bench, value in row.items()
            if bench in maxima
        }
    return normalized


def member_value(row: dict[str, float], member: str) -> float | None:
    """Resolve one aggregate member against a row, averaging split columns."""
    if member in row:
        return row[member]
    if member in SPLIT_GROUPS:
        present = [row[s] for s in SPLIT_GROUPS[member] if s in row]
        if present:
            return sum(present) / len(present)
    return None


@dataclass
class AggregateEntry:
    va: float | None
    lca: float | None
    missing_va: list[str] = field(default_factory=list)
    missing_lca: list[str] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing_va and not self.missing_lca


def _aggregate_row(row: dict[str, float]) -> AggregateEntry:
    va_values, missing_va = [], []
    for member in VA_MEMBERS:
        value = member_value(row, member)
        if value is not None:
            va_values.append(value)
        else:
            missing_va.append(member)
    lca_values, missing_lca = [], []
    for member in LCA_MEMBERS:
        value = member_value(row, member)
        if value is not None:
            lca_values.append(value)
        else:
            missing_lca.append(member)
    return AggregateEntry(
        va=sum(va_values) / len(va_values) if va_values else None,
        lca=sum(lca_values) / len(lca_values) if lca_values else None,
        missing_va=missing_va,
        missing_lca=missing_lca,
    )


@dataclass
class AggregateReport:
    normalized: ScoreTable
    entries: dict[str, AggregateEntry]
    baseline: str | None = None
    deltas: dict[str, dict[str, float | None]] = field(default_factory=dict)
    variance: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "normalized": self.normalized.rows,
            "aggregates": {
                name: {
                    "VA": entry.va,
                    "LCA": entry.lca,
                    "complete": entry.complete,
                    "missing": sorted(set(entry.missing_va + entry.missing_lca)),
                }
                for name, entry in self.entries.items()
            },
            "baseline": self.baseline,
            "deltas": self.deltas,
            "variance": self.variance,
        }


def aggregate(normalized: ScoreTable, baseline: str | None = None) -> AggregateReport:
    """VA/LCA per checkpoint over the normalized table; a checkpoint missing
    a member benchmark gets a partial value flagged incomplete, never a
    silently shrunken average presented as complete. Deltas are signed
    differences against the named baseline."""
    entries = {name: _aggregate_row(row) for name, row in normalized.rows.items()}

    deltas: dict[str, dict[str, float | None]] = {}
    if baseline is not None:
        if baseline not in entries:
            raise EvalAggError(f"baseline {baseline!r} not in table")
        base = entries[baseline]
        for name, entry in entries.items():
            deltas[name] = {
                "VA": None if entry.va is None or base.va is None else entry.va - base.va,
                "LCA": None if entry.lca is None or base.lca is None else entry.lca - base.lca,
            }

    variance: dict[str, dict[str, float]] = {}
    run_groups: dict[str, list[str]] = {}
    for checkpoint, run_id in normalized.runs:
        run_groups.setdefault(checkpoint, []).append(run_id)
    for checkpoint, run_ids in run_groups.items():
        if len(run_ids) < 2:
            continue
        va_values, lca_values = [], []
        for run_id in sorted(run_ids):
            entry = _aggregate_row(normalized.runs[(checkpoint, run_id)])
            if entry.va is not None:
                va_values.append(entry.va)
            if entry.lca is not None:
                lca_values.append(entry.lca)
        cell: dict[str, float] = {}
        if len(va_values) >= 2:
            cell["VA"] = run_variance(va_values)
        if len(lca_values) >= 2:
            cell["LCA"] = run_variance(lca_values)
        if cell:
            variance[checkpoint] = cell

    return AggregateReport(
        normalized=normalized, entries=entries, baseline=baseline,
        deltas=deltas, variance=variance,
    )


def run_variance(values: list[float]) -> float:
    """Population standard deviation (divide by N) — the convention that
    reproduces the published run-to-run sigmas."""
    if len(values) < 2:
        raise EvalAggError("variance needs at least 2 runs")
    mean = sum(values) / len(values)
    return math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))


def format_delta(value: float | None) -> str:
    if value is None:
        return "—"
    return f"{value:+.1f}"


# ---------------------------------------------------------------------------
# Leaderboard export


_LEADERBOARD_FIELDS = ("checkpoint", "method", "base_model", "merge_recipe", "data_composition")


def _leaderboard_rows(records: list[dict]) -> tuple[list[dict], list[str]]:
    if not records:
        raise EvalAggError("leaderboard needs at least one record")
    table = ScoreTable()
    for record in records:
        table.rows[record["checkpoint"]] = dict(record.get("scores", {}))
    normalized = normalize_scores(table)
    report = aggregate(normalized)

    benchmarks = table.benchmarks()
    rows = []
    for record in records:
        name = record["checkpoint"]
        entry = report.entries[name]
        rows.append({
            **{f: record.get(f, "") for f in _LEADERBOARD_FIELDS},
            "scores": dict(record.get("scores", {})),
            "normalized": report.normalized.rows[name],
            "VA": entry.va,
            "LCA": entry.lca,
            "complete": entry.complete,
            "missing": sorted(set(entry.missing_va + entry.missing_lca)),
        })
    rows.sort(key=lambda r: (not r["complete"], -(r["VA"] if r["VA"] is not None else -math.inf), r["checkpoint"]))
    return rows, benchmarks


def export_leaderboard(records: list[dict], fmt: str, path: str | Path) -> Path:
    """Deterministic leaderboard sorted by VA descending; every run ships its
    method, base model, merge recipe and data composition alongside scores.
    json mirrors the records; html is a single self-contained file."""
    rows, benchmarks = _leaderboard_rows(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(canonical_json({"benchmarks": benchmarks, "rows": rows}) + "\n", encoding="utf-8")
    elif fmt == "html":
        path.write_text(_render_html(rows, benchmarks), encoding="utf-8")
    else:
        raise EvalAggError(f"unknown leaderboard format {fmt!r}")
    return path


def _render_html(rows: list[dict], benchmarks: list[str]) -> str:
    def esc(value) -> str:
        return html_lib.escape(str(value))

    def cell(value) -> str:
        if value is None:
            return "—"
        if isinstance(value, float):
            return f"{value:.2f}"
        return esc(value)

    head_cols = ["Checkpoint", "VA", "LCA", "Method", "Base model", "Merge recipe", "Data composition"]
    head_cols += benchmarks
    parts = [
        "<!DOCTYPE html>",
        "<html><head><meta charset=\"utf-8\"><title>Long-context leaderboard</title>",
        "<style>",
        "body{font-family:system-ui,sans-serif;margin:2rem;}",
        "table{border-collapse:collapse;}",
        "th,td{border:1px solid #999;padding:0.3rem 0.6rem;text-align:left;}",
        "th{background:#eee;cursor:default;}",
        "td.num{text-align:right;font-variant-numeric:tabular-nums;}",
        "tr.incomplete{color:#888;}",
        "</style></head><body>",
        "<h1>Long-context leaderboard</h1>",
        "<p>Sorted by VA (visual long-context average over max-normalized scores), descending. "
        "Raw scores shown; — marks a missing benchmark, which leaves the aggregate incomplete.</p>",
        "<table><thead><tr>" + "".join(f"<th>{esc(c)}</th>" for c in head_cols) + "</tr></thead><tbody>",
    ]
    for row in rows:
        cls = "" if row["complete"] else " class=\"incomplete\""
        cells = [
            f"<td>{esc(row['checkpoint'])}</td>",
            f"<td class=\"num\">{cell(row['VA'])}</td>",
            f"<td class=\"num\">{cell(row['LCA'])}</td>",
            f"<td>{esc(row['method'])}</td>",
            f"<td>{esc(row['base_model'])}</td>",
            f"<td>{esc(row['merge_recipe'])}</td>",
            f"<td>{esc(row['data_composition'])}</td>",
        ]
        for bench in benchmarks:
            cells.append(f"<td class=\"num\">{cell(row['scores'].get(bench))}</td>")
        parts.append(f"<tr{cls}>" + "".join(cells) + "</tr>")
    parts.append("</tbody></table></body></html>")
    return "\n".join(parts) + "\n"

"""Task-arithmetic merging and normalized evaluation aggregation.

Training alone forgets; adding a scaled task vector (trained - base) to the
instruct model recovers instruct behavior while keeping the gains — 0.5 for
the Mistral CPT vector, 0.25 otherwise. Evaluation scores normalize by each
benchmark's column max before averaging into VA (five visual benchmarks) and
LCA (plus the two text ones).
"""

import tempfile
from pathlib import Path

import numpy as np

from longdoc.evalagg import (
    ScoreTable,
    aggregate,
    anls,
    export_leaderboard,
    format_delta,
    normalize_scores,
    run_variance,
)
from longdoc.merging import apply_task_vector, task_vector

rng = np.random.default_rng(0)
base = {"attn.weight": rng.standard_normal((4, 4)).astype(np.float32)}
trained = {"attn.weight": base["attn.weight"] + 0.2}
instruct = {"attn.weight": base["attn.weight"] + 0.05}

vector = task_vector(trained, base)
merged = apply_task_vector(instruct, vector, alpha=0.25)
print("task vector mean:", float(vector["attn.weight"].mean()))
print("merged - instruct mean (should be 0.25 * 0.2 = 0.05):",
      float((merged["attn.weight"] - instruct["attn.weight"]).mean()))

print("\nANLS: anls('kitten', ['sitting']) =", round(anls("kitten", ["sitting"]), 4))
print("ANLS below threshold scores 0:", anls("abc", ["xyz"]))

rows = {
    "teacher-235b": {"mmlongbenchdoc": 52.6, "mmlbd_c": 56.2, "mmlongbench_128k": 78.6,
                     "dude": 59.1, "slidevqa": 84.5, "helmet": 67.6, "longbench_v2": 50.0},
    "tuned-32b": {"mmlongbenchdoc": 56.7, "mmlbd_c": 57.3, "mmlongbench_128k": 73.8,
                  "dude": 54.8, "slidevqa": 66.8, "helmet": 65.7, "longbench_v2": 44.0},
    "base-32b": {"mmlongbenchdoc": 52.0, "mmlbd_c": 53.8, "mmlongbench_128k": 70.4,
                 "dude": 61.8, "slidevqa": 77.2, "helmet": 63.0, "longbench_v2": 42.0},
}
table = ScoreTable(rows=rows)
report = aggregate(normalize_scores(table), baseline="base-32b")
print("\naggregates (normalized to the per-benchmark max):")
for name, entry in sorted(report.entries.items(), key=lambda kv: -kv[1].va):
    delta = report.deltas[name]["VA"]
    print(f"  {name:14s} VA={entry.va:6.2f} ({format_delta(delta)})  LCA={entry.lca:6.2f}")

print("\nrun-to-run sigma over three evaluation runs:",
      round(run_variance([92.8, 92.4, 92.0]), 2))

records = [
    {"checkpoint": name, "method": "sft", "base_model": "32b",
     "merge_recipe": "default", "data_composition": "50K", "scores": scores}
    for name, scores in rows.items()
]
out = Path(tempfile.mkdtemp(prefix="longdoc-demo-")) / "leaderboard.html"
export_leaderboard(records, "html", out)
print(f"\nleaderboard written to {out}")

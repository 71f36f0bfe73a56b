"""Task-arithmetic model merging over named weight maps.

A task vector is the elementwise difference trained - base; merging adds a
scaled vector to a target checkpoint. Training alone causes catastrophic
forgetting; adding the scaled vector to the instruct model recovers instruct
behavior while keeping the gains. Defaults: 0.5 when folding a Mistral CPT
vector into the instruct model, 0.25 for every other training vector.
Arithmetic runs in 32-bit-or-wider floats regardless of storage precision;
storage dtype round-trips on save.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from safetensors.numpy import load_file, save_file

WeightMap = dict[str, np.ndarray]

DEFAULT_ALPHA = 0.25
DEFAULT_ALPHA_MISTRAL_CPT = 0.5

ALPHA_PRESETS = {
    "default": DEFAULT_ALPHA,
    "mistral-cpt": DEFAULT_ALPHA_MISTRAL_CPT,
}


class MergeError(ValueError):
    """Key or shape mismatch between weight maps."""


def _check_aligned(a: WeightMap, b: WeightMap, a_name: str, b_name: str) -> None:
    only_a = sorted(a.keys() - b.keys())
    only_b = sorted(b.keys() - a.keys())
    if only_a or only_b:
        raise MergeError(
            f"key sets differ: {a_name} has extra {only_a[:5]}, {b_name} has extra {only_b[:5]}"
        )
    for key in a:
        if a[key].shape != b[key].shape:
            raise MergeError(
                f"shape mismatch on {key!r}: {a[key].shape} vs {b[key].shape}"
            )


def _wide(dtype: np.dtype) -> np.dtype:
    """At least float32 for arithmetic; float64 stays float64."""
    return np.promote_types(dtype, np.float32)


def task_vector(trained: WeightMap, base: WeightMap) -> WeightMap:
    """Elementwise trained - base over identical key sets and shapes."""
    _check_aligned(trained, base, "trained", "base")
    out: WeightMap = {}
    for key in sorted(trained):
        wide = _wide(trained[key].dtype)
        out[key] = trained[key].astype(wide) - base[key].astype(wide)
    return out


def apply_task_vector(target: WeightMap, vector: WeightMap, alpha: float) -> WeightMap:
    """Elementwise target + alpha * vector, cast back to the target's storage
    dtype. alpha=0 reproduces the target bit-for-bit."""
    if not np.isfinite(alpha):
        raise MergeError("alpha must be finite")
    _check_aligned(target, vector, "target", "vector")
    out: WeightMap = {}
    for key in sorted(target):
        storage = target[key].dtype
        wide = _wide(storage)
        merged = target[key].astype(wide) + alpha * vector[key].astype(wide)
        if not np.all(np.isfinite(merged)):
            raise MergeError(f"non-finite values after merging {key!r}")
        out[key] = merged.astype(storage)
    return out


def load_weight_map(path: str | Path) -> WeightMap:
    return load_file(str(path))


def save_weight_map(weights: WeightMap, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_file({k: np.ascontiguousarray(v) for k, v in weights.items()}, str(path))


@dataclass
class MergeRecipe:
    target: str
    base: str
    trained: str
    output_path: str
    alpha: float | None = None
    alpha_preset: str = "default"

    def resolved_alpha(self) -> float:
        if self.alpha is not None:
            return self.alpha
        if self.alpha_preset not in ALPHA_PRESETS:
            raise MergeError(f"unknown alpha preset {self.alpha_preset!r}")
        return ALPHA_PRESETS[self.alpha_preset]

    @classmethod
    def from_file(cls, path: str | Path) -> "MergeRecipe":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {"target", "base", "trained", "output_path", "alpha", "alpha_preset"}
        unknown = data.keys() - known
        if unknown:
            raise MergeError(f"unknown recipe keys: {sorted(unknown)}")
        return cls(
            target=data["target"],
            base=data["base"],
            trained=data["trained"],
            output_path=data["output_path"],
            alpha=data.get("alpha"),
            alpha_preset=data.get("alpha_preset", "default"),
        )


def merge_from_recipe(recipe: MergeRecipe) -> Path:
    """Load target/base/trained maps, form the task vector, apply it at the
    recipe's alpha, and save to the recipe's output path."""
    target = load_weight_map(recipe.target)
    base = load_weight_map(recipe.base)
    trained = load_weight_map(recipe.trained)
    merged = apply_task_vector(target, task_vector(trained, base), recipe.resolved_alpha())
    out = Path(recipe.output_path)
    save_weight_map(merged, out)
    return out

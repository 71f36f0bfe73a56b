"""Reference configuration metadata.

The package never runs gradient training; these defaults are recorded so
downstream training stacks and run manifests agree on the numbers: optimizer
settings per phase, stage budgets, merge scaling factors, and the external
instruction-data mixture ratios drawn alongside the synthetic data.
"""

from __future__ import annotations

from importlib import resources

import yaml


def load_training_defaults() -> dict:
    text = resources.files("longdoc.configs").joinpath("training_defaults.yaml").read_text("utf-8")
    return yaml.safe_load(text)


def external_sft_mixture(name: str) -> dict[str, float]:
    mixtures = load_training_defaults()["external_sft_mixtures"]
    if name not in mixtures:
        raise KeyError(f"unknown mixture {name!r}; have {sorted(mixtures)}")
    return dict(mixtures[name])

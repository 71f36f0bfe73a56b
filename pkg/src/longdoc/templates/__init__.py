"""Prompt template registry.

Templates are plain text files with str.format placeholders, shipped inside
the package and overridable by pointing a directory at load time — pipeline
configs reference them by name.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


class TemplateSet:
    def __init__(self, override_dir: str | Path | None = None):
        self.override_dir = Path(override_dir) if override_dir else None

    def raw(self, name: str) -> str:
        filename = f"{name}.txt"
        if self.override_dir is not None:
            candidate = self.override_dir / filename
            if candidate.exists():
                return candidate.read_text(encoding="utf-8")
        ref = resources.files("longdoc.templates").joinpath(filename)
        if not ref.is_file():
            raise KeyError(f"unknown template {name!r}")
        return ref.read_text(encoding="utf-8")

    def render(self, name: str, **kwargs) -> str:
        return self.raw(name).format(**kwargs).strip()


DEFAULT_TEMPLATES = TemplateSet()


def render(name: str, **kwargs) -> str:
    return DEFAULT_TEMPLATES.render(name, **kwargs)

"""Prompt templates: one text asset per role, ``{{slot}}`` markers, jinja2 rendering."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Any

import jinja2

from docrefine.errors import InfrastructureError

TEMPLATE_NAMES = ("explorer", "analyzer", "rewriter", "judge", "solver")

SLOT_MARKER = re.compile(r"\{\{\s*\w+\s*\}\}")


class TemplateSet:
    def __init__(self, sources: dict[str, str]):
        self._env = jinja2.Environment(
            undefined=jinja2.StrictUndefined,
            keep_trailing_newline=False,
            trim_blocks=True,
            autoescape=False,
        )
        self.sources = dict(sources)
        self._compiled = {name: self._env.from_string(src) for name, src in sources.items()}

    @classmethod
    def default(cls) -> TemplateSet:
        pkg = resources.files("docrefine") / "prompts"
        return cls({n: (pkg / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES})

    @classmethod
    def with_overrides(cls, directory: str | Path | None) -> TemplateSet:
        """Default templates, replaced by any ``<role>.txt`` found in ``directory``."""
        base = cls.default().sources
        if directory is not None:
            d = Path(directory)
            if not d.is_dir():
                raise InfrastructureError(f"templates dir {d} does not exist")
            for name in TEMPLATE_NAMES:
                p = d / f"{name}.txt"
                if p.exists():
                    base[name] = p.read_text(encoding="utf-8")
        return cls(base)

    def render(self, name: str, **slots: Any) -> str:
        try:
            text = self._compiled[name].render(**slots)
        except jinja2.UndefinedError as exc:
            raise InfrastructureError(f"template {name!r} has an unfilled slot: {exc}") from exc
        leftover = set(SLOT_MARKER.findall(text))
        for value in slots.values():
            if isinstance(value, str):
                leftover -= set(SLOT_MARKER.findall(value))
        if leftover:
            raise InfrastructureError(f"template {name!r} left markers {sorted(leftover)}")
        return text.strip() + "\n"

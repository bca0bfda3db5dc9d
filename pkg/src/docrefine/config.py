from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from docrefine.errors import SchemaError


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 5
    phi: float = 0.9
    tau: float = 0.75
    reflection_retries: int = 3
    response_truncation_chars: int = 8192
    backend: str = "mock"
    parallelism: int = 1
    seed: int = 0
    chat_model: str = "gpt-4o"
    embedding_model: str = "text-embedding-ada-002"
    requests_per_second: float | None = None
    tool_deadline_s: float = 15.0

    def __post_init__(self) -> None:
        problems = []
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            problems.append("max_iterations must be a positive integer")
        if not 0 < self.phi <= 1:
            problems.append(f"phi must be in (0, 1], got {self.phi}")
        if not 0 < self.tau <= 1:
            problems.append(f"tau must be in (0, 1], got {self.tau}")
        if self.reflection_retries < 0:
            problems.append("reflection_retries must be >= 0")
        if self.response_truncation_chars < 1:
            problems.append("response_truncation_chars must be positive")
        if self.backend not in ("mock", "http"):
            problems.append(f"backend must be 'mock' or 'http', got {self.backend!r}")
        if self.parallelism < 1:
            problems.append("parallelism must be a positive integer")
        if self.requests_per_second is not None and self.requests_per_second <= 0:
            problems.append("requests_per_second must be positive")
        if problems:
            raise SchemaError("; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def updated(self, **overrides: Any) -> RefinementConfig:
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> RefinementConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path: str | Path) -> RefinementConfig:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise SchemaError(f"config {path}: expected a JSON object")
        return cls.from_dict(raw)

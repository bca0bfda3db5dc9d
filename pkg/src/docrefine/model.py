"""Domain types for tool documentation, exploration records and trajectories."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from typing import Any, Iterable

from docrefine.errors import InvariantViolation, SchemaError

HTTP_METHODS = ("GET", "POST", "PUT", "DELETE", "PATCH")
PARAM_KINDS = ("string", "integer", "number", "boolean")
RESPONSE_STATUSES = ("ok", "tool_error", "transport_error", "timeout")
TERMINATION_REASONS = ("delta_threshold", "max_iterations")

_PLACEHOLDER = re.compile(r"\{([^{}/]+)\}")


def url_placeholders(url_template: str) -> list[str]:
    return _PLACEHOLDER.findall(url_template)


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    kind: str = "string"
    description: str = ""
    required: bool = False
    default: Any = None
    has_default: bool = False

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "type": self.kind,
            "description": self.description,
            "required": self.required,
        }
        if self.has_default:
            d["default"] = self.default
        return d


@dataclass(frozen=True)
class ToolDocumentation:
    name: str
    description: str
    http_method: str
    url_template: str
    parameters: tuple[ParameterSpec, ...] = ()
    version: int = 0

    def parameter(self, name: str) -> ParameterSpec | None:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    @property
    def parameter_names(self) -> list[str]:
        return [p.name for p in self.parameters]

    def render(self) -> str:
        """Canonical text form used in prompts and as the retrieval document.

        Fixed order: name, description, ``METHOD url``, then one
        ``name (kind, required|optional): description`` line per parameter.
        An empty description renders as an empty line.
        """
        lines = [self.name, self.description, f"{self.http_method} {self.url_template}"]
        for p in self.parameters:
            flag = "required" if p.required else "optional"
            lines.append(f"{p.name} ({p.kind}, {flag}): {p.description}")
        return "\n".join(lines)

    def change_text(self) -> str:
        """Text compared between versions: name line plus description.

        Method, url and parameters never change during refinement, so they are
        left out to keep them from inflating the similarity.
        """
        return f"{self.name}\n{self.description}"

    def with_description(self, description: str) -> ToolDocumentation:
        return replace(self, description=description, version=self.version + 1)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "method": self.http_method,
            "url": self.url_template,
            "parameters": [p.to_dict() for p in self.parameters],
            "version": self.version,
        }


@dataclass(frozen=True)
class ExplorationInstance:
    query: str
    bindings: dict[str, Any]
    iteration: int

    def to_dict(self) -> dict[str, Any]:
        return {"query": self.query, "bindings": dict(self.bindings), "iteration": self.iteration}


@dataclass(frozen=True)
class ToolResponse:
    status: str
    body: str
    http_status: int | None = None
    truncated: bool = False
    latency_ms: int = 0

    def __post_init__(self) -> None:
        if self.status not in RESPONSE_STATUSES:
            raise InvariantViolation(f"unknown response status {self.status!r}")
        if self.status == "ok" and not (self.http_status is not None and 200 <= self.http_status < 300):
            raise InvariantViolation("status 'ok' requires a 2xx http_status")
        if self.latency_ms < 0:
            raise InvariantViolation("latency_ms must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "http_status": self.http_status,
            "body": self.body,
            "truncated": self.truncated,
            "latency_ms": self.latency_ms,
        }


@dataclass(frozen=True)
class RevisionSuggestion:
    text: str
    iteration: int


@dataclass(frozen=True)
class ExplorationDirection:
    text: str
    iteration: int


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    instance: ExplorationInstance
    response: ToolResponse
    suggestion: RevisionSuggestion
    direction: ExplorationDirection
    doc_before: ToolDocumentation
    doc_after: ToolDocumentation
    delta: float | None = None
    rejected_queries: tuple[tuple[str, float], ...] = ()
    gate_forced: bool = False
    direction_missing: bool = False
    terminated_reason: str | None = None

    def to_dict(self, tool_name: str) -> dict[str, Any]:
        return {
            "tool": tool_name,
            "iteration": self.iteration,
            "instance": self.instance.to_dict(),
            "response": self.response.to_dict(),
            "suggestion": self.suggestion.text,
            "direction": self.direction.text,
            "direction_missing": self.direction_missing,
            "doc_before": self.doc_before.to_dict(),
            "doc_after": self.doc_after.to_dict(),
            "delta": self.delta,
            "rejected_queries": [{"query": q, "max_similarity": s} for q, s in self.rejected_queries],
            "gate_forced": self.gate_forced,
            "terminated_reason": self.terminated_reason,
        }


@dataclass(frozen=True)
class RefinementTrajectory:
    tool_name: str
    initial_doc: ToolDocumentation
    records: tuple[IterationRecord, ...] = ()
    terminated_reason: str | None = None

    @property
    def current_doc(self) -> ToolDocumentation:
        return self.records[-1].doc_after if self.records else self.initial_doc

    @property
    def doc_history(self) -> list[ToolDocumentation]:
        return [self.initial_doc] + [r.doc_after for r in self.records]


def append_record(trajectory: RefinementTrajectory, record: IterationRecord) -> RefinementTrajectory:
    """Return a new trajectory with ``record`` appended.

    Raises InvariantViolation when the record breaks iteration contiguity or
    the doc_before/doc_after chain.
    """
    expected = len(trajectory.records) + 1
    if record.iteration != expected:
        raise InvariantViolation(f"expected iteration {expected}, got {record.iteration}")
    if record.doc_before != trajectory.current_doc:
        raise InvariantViolation(
            f"chain break at iteration {record.iteration}: doc_before does not match previous doc_after"
        )
    reason = record.terminated_reason
    if reason is not None and reason not in TERMINATION_REASONS:
        raise InvariantViolation(f"unknown termination reason {reason!r}")
    return replace(trajectory, records=trajectory.records + (record,), terminated_reason=reason)


# -- documentation set (de)serialization ------------------------------------


def _fail(tool: str, field_name: str, problem: str) -> SchemaError:
    return SchemaError(f"tool {tool!r}: field {field_name!r} {problem}")


def parameter_from_dict(raw: Any, tool: str) -> ParameterSpec:
    if not isinstance(raw, dict):
        raise _fail(tool, "parameters", "entries must be objects")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise _fail(tool, "parameters.name", "is missing or empty")
    kind = raw.get("type", "string")
    if kind not in PARAM_KINDS:
        raise _fail(tool, f"parameters[{name}].type", f"has unknown value {kind!r}")
    desc = raw.get("description", "")
    if not isinstance(desc, str):
        raise _fail(tool, f"parameters[{name}].description", "must be a string")
    required = raw.get("required", False)
    if not isinstance(required, bool):
        raise _fail(tool, f"parameters[{name}].required", "must be a boolean")
    return ParameterSpec(
        name=name,
        kind=kind,
        description=desc,
        required=required,
        default=raw.get("default"),
        has_default="default" in raw,
    )


def documentation_from_dict(raw: Any, index: int = 0) -> ToolDocumentation:
    if not isinstance(raw, dict):
        raise SchemaError(f"record {index}: expected an object")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError(f"record {index}: field 'name' is missing or empty")
    for key in ("description", "method", "url"):
        if key not in raw:
            raise _fail(name, key, "is missing")
        if not isinstance(raw[key], str):
            raise _fail(name, key, "must be a string")
    method = raw["method"].upper()
    if method not in HTTP_METHODS:
        raise _fail(name, "method", f"has unknown value {raw['method']!r}")
    params_raw = raw.get("parameters", [])
    if not isinstance(params_raw, list):
        raise _fail(name, "parameters", "must be an array")
    params = tuple(parameter_from_dict(p, name) for p in params_raw)
    seen: set[str] = set()
    for p in params:
        if p.name in seen:
            raise _fail(name, "parameters", f"declares {p.name!r} twice")
        seen.add(p.name)
    for ph in url_placeholders(raw["url"]):
        if ph not in seen:
            raise _fail(name, "url", f"placeholder {{{ph}}} names no declared parameter")
    version = raw.get("version", 0)
    if not isinstance(version, int) or isinstance(version, bool) or version < 0:
        raise _fail(name, "version", "must be a non-negative integer")
    return ToolDocumentation(
        name=name,
        description=raw["description"],
        http_method=method,
        url_template=raw["url"],
        parameters=params,
        version=version,
    )


def parse_documentation_set(data: bytes | str) -> list[ToolDocumentation]:
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"documentation set is not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise SchemaError("documentation set must be a JSON array")
    docs = [documentation_from_dict(r, i) for i, r in enumerate(raw)]
    check_unique_names(d.name for d in docs)
    return docs


def check_unique_names(names: Iterable[str]) -> None:
    seen: set[str] = set()
    for n in names:
        if n in seen:
            raise SchemaError(f"duplicate tool name {n!r}")
        seen.add(n)


def serialize_documentation_set(docs: Iterable[ToolDocumentation]) -> str:
    return json.dumps([d.to_dict() for d in docs], indent=2, ensure_ascii=False) + "\n"


# -- trajectory records ------------------------------------------------------


def record_from_dict(raw: dict[str, Any]) -> IterationRecord:
    """Rebuild an IterationRecord from its JSONL form (raises SchemaError)."""
    try:
        inst = raw["instance"]
        resp = raw["response"]
        it = raw["iteration"]
        return IterationRecord(
            iteration=it,
            instance=ExplorationInstance(inst["query"], dict(inst["bindings"]), inst["iteration"]),
            response=ToolResponse(
                status=resp["status"],
                body=resp["body"],
                http_status=resp.get("http_status"),
                truncated=resp.get("truncated", False),
                latency_ms=resp.get("latency_ms", 0),
            ),
            suggestion=RevisionSuggestion(raw["suggestion"], it),
            direction=ExplorationDirection(raw["direction"], it),
            doc_before=documentation_from_dict(raw["doc_before"]),
            doc_after=documentation_from_dict(raw["doc_after"]),
            delta=raw.get("delta"),
            rejected_queries=tuple((r["query"], r["max_similarity"]) for r in raw.get("rejected_queries", [])),
            gate_forced=raw.get("gate_forced", False),
            direction_missing=raw.get("direction_missing", False),
            terminated_reason=raw.get("terminated_reason"),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed trajectory record: {exc!r}") from exc
    except InvariantViolation as exc:
        raise SchemaError(f"malformed trajectory record: {exc}") from exc

"""Execute exploration instances against live HTTP tools or a fixture sandbox."""

from __future__ import annotations

import fnmatch
import json
import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol
from urllib.parse import quote

import httpx

from docrefine.errors import FixtureError
from docrefine.model import ExplorationInstance, ToolDocumentation, ToolResponse, url_placeholders

log = logging.getLogger(__name__)

DEFAULT_TRUNCATION_CHARS = 8192
DEFAULT_DEADLINE_S = 15.0

_GLOB_CHARS = set("*?[")


def truncate(body: str, cap: int) -> tuple[str, bool]:
    # str slicing is by code point, so a multi-byte character is never split
    if len(body) <= cap:
        return body, False
    return body[:cap], True


def _literal(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return str(value)


def resolve_bindings(
    instance: ExplorationInstance, doc: ToolDocumentation
) -> tuple[dict[str, Any], str | None]:
    """Fill documented defaults; return (bindings, name of first missing required parameter)."""
    bound = dict(instance.bindings)
    for p in doc.parameters:
        if p.name not in bound and p.has_default:
            bound[p.name] = p.default
    for p in doc.parameters:
        if p.required and p.name not in bound:
            return bound, p.name
    for ph in url_placeholders(doc.url_template):
        if ph not in bound:
            return bound, ph
    return bound, None


def build_url(url_template: str, bindings: Mapping[str, Any]) -> tuple[str, dict[str, Any]]:
    """Substitute path placeholders; return the URL and the bindings left over."""
    used = set()

    def sub(m: re.Match) -> str:
        used.add(m.group(1))
        return quote(_literal(bindings[m.group(1)]), safe="")

    url = re.sub(r"\{([^{}/]+)\}", sub, url_template)
    return url, {k: v for k, v in bindings.items() if k not in used}


def _missing_response(param: str) -> ToolResponse:
    return ToolResponse(
        status="tool_error",
        body=f"Missing required parameter '{param}': no value was provided and the documentation declares no default.",
    )


class Executor(Protocol):
    def execute(self, instance: ExplorationInstance, doc: ToolDocumentation) -> ToolResponse: ...


# -- sandbox -----------------------------------------------------------------


@dataclass(frozen=True)
class SandboxFixture:
    url_pattern: str | None
    binding_matchers: dict[str, str]
    response_status: int
    response_body: str

    def matches(self, path: str, bindings: Mapping[str, Any]) -> bool:
        if self.url_pattern is not None and not _pattern_regex(self.url_pattern).search(path):
            return False
        for name, matcher in self.binding_matchers.items():
            if matcher == "*":
                continue
            if name not in bindings:
                return False
            value = _literal(bindings[name])
            if _GLOB_CHARS & set(matcher):
                if not fnmatch.fnmatchcase(value, matcher):
                    return False
            elif value != matcher:
                return False
        return True

    @property
    def is_catch_all(self) -> bool:
        return all(m == "*" for m in self.binding_matchers.values())


def _pattern_regex(pattern: str) -> re.Pattern:
    parts = re.split(r"(\{[^{}/]+\})", pattern)
    rx = "".join("[^/]+" if p.startswith("{") and p.endswith("}") else re.escape(p) for p in parts)
    return re.compile(rx + r"(?:\?.*)?$")


def _fixture_from_dict(raw: Any, where: str) -> SandboxFixture:
    if not isinstance(raw, dict):
        raise FixtureError(f"{where}: expected an object")
    matchers = raw.get("binding_matchers", {})
    if not isinstance(matchers, dict) or not all(isinstance(v, str) for v in matchers.values()):
        raise FixtureError(f"{where}: binding_matchers must map parameter names to strings")
    status = raw.get("response_status")
    if not isinstance(status, int) or isinstance(status, bool):
        raise FixtureError(f"{where}: response_status must be an integer")
    body = raw.get("response_body", "")
    if not isinstance(body, str):
        body = json.dumps(body, ensure_ascii=False)
    pattern = raw.get("url_pattern")
    if pattern is not None and not isinstance(pattern, str):
        raise FixtureError(f"{where}: url_pattern must be a string")
    return SandboxFixture(pattern, dict(matchers), status, body)


def load_sandbox(directory: str | Path) -> dict[str, list[SandboxFixture]]:
    """Load every ``*.json`` fixture file in name order into a registry keyed by tool.

    Entries for a tool named in several files are concatenated in file order.
    """
    registry: dict[str, list[SandboxFixture]] = {}
    for path in sorted(Path(directory).glob("*.json")):
        try:
            raw = json.loads(path.read_bytes())
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{path.name}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict) or not isinstance(raw.get("tool"), str):
            raise FixtureError(f"{path.name}: expected an object with a 'tool' name")
        entries = raw.get("entries")
        if not isinstance(entries, list):
            raise FixtureError(f"{path.name}: 'entries' must be an array")
        fixtures = [_fixture_from_dict(e, f"{path.name} entry {i}") for i, e in enumerate(entries)]
        registry.setdefault(raw["tool"], []).extend(fixtures)
    for tool, fixtures in registry.items():
        if not any(f.is_catch_all for f in fixtures):
            log.warning("sandbox tool %r has no catch-all fixture", tool)
    return registry


class SandboxExecutor:
    """Deterministic executor: first matching fixture wins, latency is always 0."""

    def __init__(self, registry: Mapping[str, list[SandboxFixture]], truncation_chars: int = DEFAULT_TRUNCATION_CHARS):
        self.registry = {k: tuple(v) for k, v in registry.items()}
        self.truncation_chars = truncation_chars

    @classmethod
    def from_directory(cls, directory: str | Path, truncation_chars: int = DEFAULT_TRUNCATION_CHARS) -> SandboxExecutor:
        return cls(load_sandbox(directory), truncation_chars)

    def execute(self, instance: ExplorationInstance, doc: ToolDocumentation) -> ToolResponse:
        bindings, missing = resolve_bindings(instance, doc)
        if missing is not None:
            return _missing_response(missing)
        path, _ = build_url(doc.url_template, bindings)
        for fx in self.registry.get(doc.name, ()):
            if fx.matches(path, bindings):
                body, cut = truncate(fx.response_body, self.truncation_chars)
                ok = 200 <= fx.response_status < 300
                return ToolResponse(
                    status="ok" if ok else "tool_error",
                    http_status=fx.response_status,
                    body=body,
                    truncated=cut,
                )
        return ToolResponse(status="transport_error", body=f"no fixture matches {doc.name} {path}")


# -- live HTTP ---------------------------------------------------------------


class HttpExecutor:
    def __init__(
        self,
        truncation_chars: int = DEFAULT_TRUNCATION_CHARS,
        deadline_s: float = DEFAULT_DEADLINE_S,
        bearer_token: str | None = None,
        client: httpx.Client | None = None,
    ):
        self.truncation_chars = truncation_chars
        headers = {"Authorization": f"Bearer {bearer_token}"} if bearer_token else {}
        self._client = client or httpx.Client(timeout=deadline_s, headers=headers)

    def execute(self, instance: ExplorationInstance, doc: ToolDocumentation) -> ToolResponse:
        bindings, missing = resolve_bindings(instance, doc)
        if missing is not None:
            return _missing_response(missing)
        url, rest = build_url(doc.url_template, bindings)
        kwargs: dict[str, Any] = {}
        if doc.http_method in ("GET", "DELETE"):
            kwargs["params"] = {k: _literal(v) for k, v in rest.items()}
        else:
            kwargs["json"] = rest
        start = time.monotonic()
        try:
            resp = self._client.request(doc.http_method, url, **kwargs)
        except httpx.TimeoutException:
            return ToolResponse(status="timeout", body=f"deadline exceeded calling {url}",
                                latency_ms=_ms_since(start))
        except httpx.HTTPError as exc:
            return ToolResponse(status="transport_error", body=f"{type(exc).__name__}: {exc}",
                                latency_ms=_ms_since(start))
        body, cut = truncate(resp.text, self.truncation_chars)
        ok = 200 <= resp.status_code < 300
        return ToolResponse(
            status="ok" if ok else "tool_error",
            http_status=resp.status_code,
            body=body,
            truncated=cut,
            latency_ms=_ms_since(start),
        )


def _ms_since(start: float) -> int:
    return max(0, int((time.monotonic() - start) * 1000))

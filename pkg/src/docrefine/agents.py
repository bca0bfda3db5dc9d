"""Explorer, Analyzer and Rewriter roles: prompt construction and strict reply parsing."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from docrefine.errors import AgentOutputError, ReplyParseError
from docrefine.gateway import ChatExchange
from docrefine.metrics import max_history_similarity
from docrefine.model import (
    ExplorationDirection,
    ExplorationInstance,
    RevisionSuggestion,
    ToolDocumentation,
    ToolResponse,
)
from docrefine.templates import TemplateSet

RETRY_NOTICE = "Reply with only the JSON object."

_FENCE = re.compile(r"```[a-zA-Z0-9_-]*")

USER_LINES = {
    "explorer": 'Synthesize the next exploration. Reply with a JSON object with keys "User Query" and "Parameters".',
    "analyzer": 'Give your suggestions as a JSON object with the key "Suggestions".',
    "rewriter": 'Reply with a JSON object with keys "Rewritten description" and "Suggestions for exploring".',
}


def parse_agent_reply(raw: str, required_keys: Sequence[str], object_keys: Sequence[str] = ("Parameters",)) -> dict[str, Any]:
    """Extract the first balanced JSON object from ``raw`` and check its keys.

    Code fences are ignored. Keys in ``object_keys`` must hold objects, every
    other required key a string.
    """
    text = _FENCE.sub("", raw)
    decoder = json.JSONDecoder()
    obj = None
    for m in re.finditer(r"\{", text):
        try:
            candidate, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
    if obj is None:
        raise ReplyParseError("reply contains no JSON object", raw)
    for key in required_keys:
        if key not in obj:
            raise ReplyParseError(f"reply lacks key {key!r}", raw)
        want = dict if key in object_keys else str
        if not isinstance(obj[key], want):
            raise ReplyParseError(f"key {key!r} must be a {'JSON object' if want is dict else 'string'}", raw)
    return obj


def render_example(instance: ExplorationInstance, response: ToolResponse, doc: ToolDocumentation) -> str:
    return json.dumps(
        {
            "User Query": instance.query,
            "url": doc.url_template,
            "Parameters": instance.bindings,
            "API_Response": response.body,
            "status": response.status,
        },
        ensure_ascii=False,
    )


def render_history(docs: Sequence[ToolDocumentation]) -> str:
    if not docs:
        return "(none)"
    return "\n".join(f"Version {d.version}: {d.description}" for d in docs)


def reflection_addendum(rejected_query: str, similarity: float, phi: float) -> str:
    return (
        f"Your previous query was too similar to one already explored "
        f"(similarity {similarity:.4f} >= {phi}); think about why it overlaps and synthesize a clearly "
        f"different query. Rejected query: {rejected_query}"
    )


@dataclass
class Agents:
    """Stateless role agents bound to a gateway (anything with ``chat``)."""

    gateway: Any
    templates: TemplateSet = field(default_factory=TemplateSet.default)
    parse_retries: int = 1
    max_output_chars: int = 4000

    def _ask(self, role: str, system: str, required: Sequence[str], validate: Callable[[dict], None] | None = None) -> dict[str, Any]:
        user = USER_LINES[role]
        last: AgentOutputError | None = None
        for attempt in range(self.parse_retries + 1):
            if attempt:
                user = f"{USER_LINES[role]}\n{RETRY_NOTICE}"
            raw = self.gateway.chat(
                ChatExchange(system=system, user=user, role=role, max_output_chars=self.max_output_chars)
            )
            try:
                obj = parse_agent_reply(raw, required)
                if validate is not None:
                    validate(obj)
                return obj
            except AgentOutputError as exc:
                last = exc
        assert last is not None
        raise AgentOutputError(f"{role}: {last}", last.raw)

    def explorer_prompt(
        self,
        doc: ToolDocumentation,
        direction: ExplorationDirection | None,
        explored_queries: Sequence[str],
        reflection: str = "",
    ) -> str:
        return self.templates.render(
            "explorer",
            tool_documentation=doc.render(),
            explored_queries="\n".join(f"{i}. {q}" for i, q in enumerate(explored_queries, 1)),
            suggestions=direction.text if direction else "",
            reflection=reflection,
        )

    def explorer_generate(
        self,
        doc: ToolDocumentation,
        direction: ExplorationDirection | None,
        explored_queries: Sequence[str],
        iteration: int,
        reflection: str = "",
    ) -> ExplorationInstance:
        declared = set(doc.parameter_names)

        def validate(obj: dict) -> None:
            if not obj["User Query"].strip():
                raise ReplyParseError("empty user query", json.dumps(obj))
            unknown = sorted(set(obj["Parameters"]) - declared)
            if unknown:
                raise AgentOutputError(f"parameters {unknown} are not declared by {doc.name}", json.dumps(obj))

        obj = self._ask("explorer", self.explorer_prompt(doc, direction, explored_queries, reflection),
                        ["User Query", "Parameters"], validate)
        return ExplorationInstance(obj["User Query"], dict(obj["Parameters"]), iteration)

    def analyzer_prompt(self, doc, examples: Sequence[tuple[ExplorationInstance, ToolResponse]], doc_history) -> str:
        return self.templates.render(
            "analyzer",
            tool_documentation=doc.render(),
            explored_examples="\n".join(render_example(i, r, doc) for i, r in examples),
            history=render_history(doc_history),
        )

    def analyzer_suggest(
        self,
        doc: ToolDocumentation,
        examples: Sequence[tuple[ExplorationInstance, ToolResponse]],
        doc_history: Sequence[ToolDocumentation],
        iteration: int,
    ) -> RevisionSuggestion:
        obj = self._ask("analyzer", self.analyzer_prompt(doc, examples, doc_history), ["Suggestions"])
        return RevisionSuggestion(obj["Suggestions"], iteration)

    def rewriter_prompt(self, doc, examples, suggestion: RevisionSuggestion, doc_history) -> str:
        return self.templates.render(
            "rewriter",
            tool_documentation=doc.render(),
            explored_examples="\n".join(render_example(i, r, doc) for i, r in examples),
            suggestions=suggestion.text,
            history=render_history(doc_history),
        )

    def rewriter_rewrite(
        self,
        doc: ToolDocumentation,
        examples: Sequence[tuple[ExplorationInstance, ToolResponse]],
        suggestion: RevisionSuggestion,
        doc_history: Sequence[ToolDocumentation],
        iteration: int,
    ) -> tuple[ExplorationDirection, ToolDocumentation, bool]:
        """Return (next direction, rewritten doc, whether the direction key was missing)."""

        def validate(obj: dict) -> None:
            if not obj["Rewritten description"].strip():
                raise ReplyParseError("empty rewritten description", json.dumps(obj))
            if "Suggestions for exploring" in obj and not isinstance(obj["Suggestions for exploring"], str):
                raise ReplyParseError("'Suggestions for exploring' must be a string", json.dumps(obj))

        obj = self._ask("rewriter", self.rewriter_prompt(doc, examples, suggestion, doc_history),
                        ["Rewritten description"], validate)
        missing = "Suggestions for exploring" not in obj
        direction = ExplorationDirection("" if missing else obj["Suggestions for exploring"], iteration)
        return direction, doc.with_description(obj["Rewritten description"]), missing


@dataclass
class GateResult:
    accepted: ExplorationInstance
    embedding: list[float]
    max_similarity: float
    rejected: list[tuple[str, float]]
    forced: bool


def diversity_gate(
    candidate: ExplorationInstance,
    accepted_embeddings: Sequence[Sequence[float]],
    phi: float,
    reflection_retries: int,
    regenerate: Callable[[str], ExplorationInstance],
    embed: Callable[[str], list[float]],
) -> GateResult:
    """Accept a query whose max cosine to accepted queries is below ``phi``.

    A too-similar candidate is discarded and ``regenerate`` is called with a
    reflection addendum, at most ``reflection_retries`` times. When the budget
    runs out, the least similar attempt is accepted and marked forced.
    """
    if not 0 < phi <= 1:
        raise ValueError("phi must be in (0, 1]")
    tried: list[tuple[ExplorationInstance, list[float], float]] = []
    current = candidate
    while True:
        emb = embed(current.query)
        sim = max_history_similarity(emb, accepted_embeddings)
        tried.append((current, emb, sim))
        if sim < phi:
            rejected = [(inst.query, s) for inst, _, s in tried[:-1]]
            return GateResult(current, emb, sim, rejected, forced=False)
        if len(tried) > reflection_retries:
            break
        current = regenerate(reflection_addendum(current.query, sim, phi))
    best = min(range(len(tried)), key=lambda k: tried[k][2])
    inst, emb, sim = tried[best]
    rejected = [(t[0].query, t[2]) for k, t in enumerate(tried) if k != best]
    return GateResult(inst, emb, sim, rejected, forced=True)

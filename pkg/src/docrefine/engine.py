"""The refinement loop: explore, gate, execute, analyze, rewrite, measure change, stop."""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from docrefine.agents import Agents, diversity_gate
from docrefine.config import RefinementConfig
from docrefine.errors import DraftError, InfrastructureError, InvariantViolation
from docrefine.executor import Executor
from docrefine.gateway import Gateway, ScopedGateway
from docrefine.metrics import change_score, should_terminate
from docrefine.model import (
    ExplorationDirection,
    IterationRecord,
    RefinementTrajectory,
    ToolDocumentation,
    append_record,
    check_unique_names,
)
from docrefine.templates import TemplateSet

log = logging.getLogger(__name__)


def tool_dirname(name: str) -> str:
    """Directory name for a tool's outputs; never escapes the output root."""
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", name)
    return "_" + safe if safe in ("", ".", "..") else safe


@dataclass
class RefinementOutcome:
    final_doc: ToolDocumentation
    trajectory: RefinementTrajectory
    iterations_used: int
    terminated_reason: str
    llm_calls: int = 0
    tool_calls: int = 0


class TrajectoryWriter:
    """Appends one JSON line per iteration and fsyncs it, so a killed run leaves a valid prefix."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_bytes(b"")

    def write(self, record: IterationRecord, tool_name: str) -> None:
        if self.path is None:
            return
        line = json.dumps(record.to_dict(tool_name), ensure_ascii=False) + "\n"
        with open(self.path, "ab") as fh:
            fh.write(line.encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())


def refine_tool(
    raw_doc: ToolDocumentation,
    config: RefinementConfig,
    gateway: Gateway | ScopedGateway,
    executor: Executor,
    agents: Agents | None = None,
    trajectory_path: str | Path | None = None,
) -> RefinementOutcome:
    if raw_doc.version != 0:
        raise InvariantViolation(f"{raw_doc.name}: refinement starts from version 0, got {raw_doc.version}")
    agents = agents or Agents(gateway)
    writer = TrajectoryWriter(trajectory_path)
    traj = RefinementTrajectory(raw_doc.name, raw_doc)
    accepted_queries: list[str] = []
    accepted_embeddings: list[list[float]] = []
    examples = []
    direction = ExplorationDirection("", 0)
    tool_calls = 0

    for i in range(1, config.max_iterations + 1):
        doc_prev = traj.current_doc
        history = traj.doc_history

        def regenerate(reflection: str, doc=doc_prev, d=direction, i=i):
            return agents.explorer_generate(doc, d, accepted_queries, i, reflection=reflection)

        candidate = agents.explorer_generate(doc_prev, direction, accepted_queries, i)
        gate = diversity_gate(candidate, accepted_embeddings, config.phi, config.reflection_retries,
                              regenerate, gateway.embed)
        response = executor.execute(gate.accepted, doc_prev)
        tool_calls += 1
        examples.append((gate.accepted, response))

        suggestion = agents.analyzer_suggest(doc_prev, examples, history, i)
        next_direction, doc_new, direction_missing = agents.rewriter_rewrite(
            doc_prev, examples, suggestion, history, i
        )
        delta = change_score(doc_new, doc_prev,
                             gateway.embed(doc_new.change_text()), gateway.embed(doc_prev.change_text()))
        if should_terminate(delta, config.tau):
            reason = "delta_threshold"
        elif i == config.max_iterations:
            reason = "max_iterations"
        else:
            reason = None

        record = IterationRecord(
            iteration=i,
            instance=gate.accepted,
            response=response,
            suggestion=suggestion,
            direction=next_direction,
            doc_before=doc_prev,
            doc_after=doc_new,
            delta=delta,
            rejected_queries=tuple(gate.rejected),
            gate_forced=gate.forced,
            direction_missing=direction_missing,
            terminated_reason=reason,
        )
        traj = append_record(traj, record)
        writer.write(record, raw_doc.name)
        log.info("%s iteration %d: delta=%.4f%s", raw_doc.name, i, delta, f" -> {reason}" if reason else "")

        accepted_queries.append(gate.accepted.query)
        accepted_embeddings.append(gate.embedding)
        direction = next_direction
        if reason is not None:
            break

    llm_calls = gateway.llm_calls if isinstance(gateway, ScopedGateway) else 0
    return RefinementOutcome(
        final_doc=traj.current_doc,
        trajectory=traj,
        iterations_used=len(traj.records),
        terminated_reason=traj.terminated_reason or "max_iterations",
        llm_calls=llm_calls,
        tool_calls=tool_calls,
    )


@dataclass
class RunReport:
    total_tools: int
    refined: list[str] = field(default_factory=list)
    aborted: list[dict[str, str]] = field(default_factory=list)
    total_llm_calls: int = 0
    total_tool_calls: int = 0
    tools: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_tools": self.total_tools,
            "refined": self.refined,
            "aborted": self.aborted,
            "total_llm_calls": self.total_llm_calls,
            "total_tool_calls": self.total_tool_calls,
            "tools": self.tools,
        }


def refine_set(
    docs: Sequence[ToolDocumentation],
    config: RefinementConfig,
    gateway: Gateway,
    executor: Executor,
    templates: TemplateSet | None = None,
    out_dir: str | Path | None = None,
) -> tuple[list[RefinementOutcome], RunReport]:
    """Refine each tool independently, up to ``config.parallelism`` at a time.

    A tool-level failure is recorded in the report and does not stop the
    others; an InfrastructureError aborts the whole run.
    """
    check_unique_names(d.name for d in docs)
    templates = templates or TemplateSet.default()
    out = Path(out_dir) if out_dir is not None else None

    def work(doc: ToolDocumentation):
        scoped = gateway.scoped(doc.name)
        agents = Agents(scoped, templates)
        traj_path = out / tool_dirname(doc.name) / "trajectory.jsonl" if out is not None else None
        try:
            outcome = refine_tool(doc, config, scoped, executor, agents, traj_path)
        except InfrastructureError:
            raise
        except DraftError as exc:
            log.warning("aborting %s: %s", doc.name, exc)
            return doc, None, exc, scoped
        if out is not None:
            final = out / tool_dirname(doc.name) / "final.json"
            final.write_text(json.dumps(outcome.final_doc.to_dict(), indent=2, ensure_ascii=False) + "\n",
                             encoding="utf-8")
        return doc, outcome, None, scoped

    if config.parallelism == 1:
        results = [work(d) for d in docs]
    else:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(work, docs))

    report = RunReport(total_tools=len(docs))
    outcomes = []
    for doc, outcome, exc, scoped in results:
        report.total_llm_calls += scoped.llm_calls
        if outcome is None:
            report.aborted.append({"tool": doc.name, "error": f"{type(exc).__name__}: {exc}"})
            report.tools.append({"tool": doc.name, "status": "aborted"})
            continue
        outcomes.append(outcome)
        report.refined.append(doc.name)
        report.total_tool_calls += outcome.tool_calls
        report.tools.append({
            "tool": doc.name,
            "status": "refined",
            "iterations_used": outcome.iterations_used,
            "terminated_reason": outcome.terminated_reason,
            "final_version": outcome.final_doc.version,
        })
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return outcomes, report

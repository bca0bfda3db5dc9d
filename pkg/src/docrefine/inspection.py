"""Trajectory file validation and human-readable rendering."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from docrefine.errors import DraftError
from docrefine.model import RefinementTrajectory, append_record, record_from_dict


class TrajectoryFormatError(DraftError):
    def __init__(self, message: str, line: int, valid_prefix: list[dict[str, Any]]):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.valid_prefix = valid_prefix


def load_trajectory(path: str | Path) -> list[dict[str, Any]]:
    """Parse and lint a trajectory JSONL file.

    Checks JSON validity, record schema, iteration contiguity and the
    doc_before/doc_after chain. On the first bad line a TrajectoryFormatError
    carries the records that precede it.
    """
    data = Path(path).read_bytes()
    lines = data.split(b"\n")
    # a complete file ends with "\n", leaving one empty trailing chunk
    trailing_ok = lines[-1] == b""
    if trailing_ok:
        lines = lines[:-1]
    records: list[dict[str, Any]] = []
    traj: RefinementTrajectory | None = None
    for n, raw in enumerate(lines, 1):
        try:
            row = json.loads(raw.decode("utf-8"))
            if not isinstance(row, dict):
                raise ValueError("record is not a JSON object")
            rec = record_from_dict(row)
            if traj is None:
                traj = RefinementTrajectory(row.get("tool", rec.doc_before.name), rec.doc_before)
            traj = append_record(traj, rec)
        except (ValueError, UnicodeDecodeError, DraftError) as exc:
            raise TrajectoryFormatError(str(exc), n, records) from exc
        if n == len(lines) and not trailing_ok:
            raise TrajectoryFormatError("last line is not newline-terminated (truncated write?)", n, records)
        records.append(row)
    return records


def _block(obj: dict[str, Any]) -> str:
    return json.dumps(obj, ensure_ascii=False)


def render_text(records: list[dict[str, Any]]) -> str:
    if not records:
        return "(empty trajectory)\n"
    first = records[0]
    out = [f"Tool: {first.get('tool', first['doc_before']['name'])}",
           "Raw Tool Documentation",
           _block({"tool name": first["doc_before"]["name"], "tool description": first["doc_before"]["description"]}),
           ""]
    for r in records:
        inst, resp = r["instance"], r["response"]
        out.append(f"=== Iteration {r['iteration']} ===")
        out.append("/* Explorer */")
        out.append(_block({"User Query": inst["query"], "url": r["doc_before"]["url"],
                           "Parameters": inst["bindings"], "API_Response": resp["body"]}))
        for q in r.get("rejected_queries", []):
            out.append(f"  (rejected, similarity {q['max_similarity']:.4f}): {q['query']}")
        if r.get("gate_forced"):
            out.append("  (diversity gate forced: least similar attempt accepted)")
        out.append("/* Analyzer */")
        out.append(r["suggestion"])
        out.append("/* Rewriter */")
        out.append(_block({"Rewritten description": r["doc_after"]["description"],
                           "Suggestions for exploring": r["direction"]}))
        if r["delta"] is not None:
            out.append(f"Delta: {r['delta']:.6f}")
        if r.get("terminated_reason"):
            out.append(f"Terminated after iteration {r['iteration']}: {r['terminated_reason']}")
        out.append("")
    return "\n".join(out) + "\n"

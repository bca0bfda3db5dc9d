import json

import pytest

import scenarios
from docrefine.config import RefinementConfig
from docrefine.engine import refine_set, refine_tool, tool_dirname
from docrefine.errors import InvariantViolation, SchemaError, TapeExhausted
from docrefine.executor import SandboxExecutor
from docrefine.gateway import Gateway, MockBackend, Tape
from docrefine.inspection import load_trajectory
from docrefine.model import documentation_from_dict


def _gateway(entries, vectors=None, seed=0):
    return Gateway(MockBackend(Tape.from_json(json.dumps({"entries": entries, "vectors": vectors or {}})), seed=seed))


def _tv_run(tv_doc, tv_fixture_dir, path=None, **cfg):
    gw = _gateway(scenarios.tv_credits_tape())
    ex = SandboxExecutor.from_directory(tv_fixture_dir)
    return refine_tool(tv_doc, RefinementConfig(**cfg), gw.scoped(tv_doc.name), ex, trajectory_path=path)


def test_tv_credits_terminates_on_delta(tv_doc, tv_fixture_dir):
    out = _tv_run(tv_doc, tv_fixture_dir)
    deltas = [r.delta for r in out.trajectory.records]
    assert out.iterations_used == 3 and out.terminated_reason == "delta_threshold"
    assert deltas[0] <= 0.75 and deltas[1] <= 0.75 and deltas[2] == 1.0
    assert out.final_doc.description == scenarios.REWRITES[1]
    assert [r.doc_after.version for r in out.trajectory.records] == [1, 2, 3]


def test_disjoint_rewrites_run_all_iterations():
    doc = documentation_from_dict(scenarios.simple_tool("lookup"))
    gw = _gateway(scenarios.disjoint_tape("lookup", 4))
    ex = SandboxExecutor({})
    out = refine_tool(doc, RefinementConfig(max_iterations=4), gw.scoped("lookup"), ex)
    assert out.iterations_used == 4 and out.terminated_reason == "max_iterations"
    assert all(r.delta < 0.75 for r in out.trajectory.records)
    assert out.trajectory.records[-1].terminated_reason == "max_iterations"


def test_single_iteration_bound(tv_doc, tv_fixture_dir):
    out = _tv_run(tv_doc, tv_fixture_dir, max_iterations=1)
    assert out.iterations_used == 1 and out.terminated_reason == "max_iterations"


def test_delta_equal_to_tau_does_not_stop():
    # pinned vectors: cosine exactly 0.5; the rewrite differs only in case so BLEU is exactly 1
    doc = documentation_from_dict(scenarios.simple_tool("t", "Returns data."))
    new_desc = "returns DATA."
    entries = [
        {"role_tag": "explorer", "response": json.dumps({"User Query": "q one", "Parameters": {"item_id": "1"}})},
        {"role_tag": "analyzer", "response": json.dumps({"Suggestions": "s"})},
        {"role_tag": "rewriter", "response": json.dumps({"Rewritten description": new_desc,
                                                         "Suggestions for exploring": ""})},
    ]
    vectors = {"t\nReturns data.": [1, 1, 0], f"t\n{new_desc}": [1, 0, 1]}
    gw = _gateway(entries, vectors)
    with pytest.raises(TapeExhausted):
        refine_tool(doc, RefinementConfig(max_iterations=2, tau=0.75), gw.scoped("t"), SandboxExecutor({}))
    # a second explorer call means iteration 1 (delta == tau) did not terminate
    assert sum(1 for p in gw.backend.prompts if p.role == "explorer") == 2
    gw2 = _gateway(entries, vectors)
    out = refine_tool(doc, RefinementConfig(max_iterations=1, tau=0.75), gw2.scoped("t"), SandboxExecutor({}))
    assert out.trajectory.records[0].delta == 0.75
    assert out.terminated_reason == "max_iterations"


def test_raw_doc_must_be_version_zero(tv_doc, tv_fixture_dir):
    with pytest.raises(InvariantViolation):
        _tv_run(tv_doc.with_description("x"), tv_fixture_dir)


def test_trajectory_file_chain(tv_doc, tv_fixture_dir, tmp_path):
    path = tmp_path / "traj.jsonl"
    out = _tv_run(tv_doc, tv_fixture_dir, path=path)
    rows = load_trajectory(path)
    assert len(rows) == out.iterations_used
    assert [r["doc_before"]["version"] for r in rows] == [0, 1, 2]
    assert all(r["delta"] is not None for r in rows)
    assert rows[-1]["terminated_reason"] == "delta_threshold"
    assert [r["terminated_reason"] for r in rows[:-1]] == [None, None]


def test_rerun_is_byte_identical(tv_doc, tv_fixture_dir, tmp_path):
    _tv_run(tv_doc, tv_fixture_dir, path=tmp_path / "a.jsonl")
    _tv_run(tv_doc, tv_fixture_dir, path=tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_explorer_sees_only_accepted_queries(tv_doc, tv_fixture_dir):
    gw = _gateway(scenarios.tv_credits_tape())
    refine_tool(tv_doc, RefinementConfig(), gw.scoped(tv_doc.name), SandboxExecutor.from_directory(tv_fixture_dir))
    explorer_prompts = [p.prompt for p in gw.backend.prompts if p.role == "explorer"]
    assert "already explored" not in explorer_prompts[0]
    assert f"1. {scenarios.QUERIES[0]}\n2. {scenarios.QUERIES[1]}" in explorer_prompts[2]
    assert scenarios.DIRECTIONS[1] in explorer_prompts[2]


def test_analyzer_gets_full_example_history(tv_doc, tv_fixture_dir):
    gw = _gateway(scenarios.tv_credits_tape())
    refine_tool(tv_doc, RefinementConfig(), gw.scoped(tv_doc.name), SandboxExecutor.from_directory(tv_fixture_dir))
    analyzer_prompts = [p.prompt for p in gw.backend.prompts if p.role == "analyzer"]
    assert all(q in analyzer_prompts[2] for q in scenarios.QUERIES)
    assert '\\"cast\\": []' in analyzer_prompts[2]
    assert "Version 2:" in analyzer_prompts[2] and "Version 3:" not in analyzer_prompts[2]


def test_gate_rejection_recorded(tv_doc, tv_fixture_dir):
    tape = scenarios.tv_credits_tape()
    # a duplicate of query 1 inserted before query 2 forces one reflection
    dup = {"role_tag": "explorer", "response": json.dumps({"User Query": scenarios.QUERIES[0],
                                                           "Parameters": {"person_id": "x"}})}
    tape.insert(3, dup)
    gw = _gateway(tape)
    out = refine_tool(tv_doc, RefinementConfig(), gw.scoped(tv_doc.name),
                      SandboxExecutor.from_directory(tv_fixture_dir))
    rec2 = out.trajectory.records[1]
    assert [q for q, _ in rec2.rejected_queries] == [scenarios.QUERIES[0]]
    assert rec2.instance.query == scenarios.QUERIES[1] and not rec2.gate_forced
    reflect = [p.prompt for p in gw.backend.prompts if p.role == "explorer"][2]
    assert "too similar" in reflect


# -- refine_set ---------------------------------------------------------------------


def test_refine_set_two_tools_parallel(tmp_path):
    docs = [documentation_from_dict(scenarios.simple_tool(n)) for n in ("a", "b")]
    entries = scenarios.disjoint_tape("a", 2) + scenarios.disjoint_tape("b", 2)
    outcomes, report = refine_set(docs, RefinementConfig(max_iterations=2, parallelism=2), _gateway(entries),
                                  SandboxExecutor({}), out_dir=tmp_path)
    assert len(outcomes) == 2 and report.total_tools == 2 and report.aborted == []
    assert report.total_tool_calls == 4
    # 3 chat + 1 query embed + 2 doc embeds per iteration
    assert report.total_llm_calls == 2 * 2 * 6
    assert json.loads((tmp_path / "report.json").read_text())["total_tools"] == 2
    assert json.loads((tmp_path / "a" / "final.json").read_text())["version"] == 2


def test_refine_set_isolates_failures(tmp_path):
    docs = [documentation_from_dict(scenarios.simple_tool(n)) for n in ("a", "b", "c")]
    entries = scenarios.disjoint_tape("a", 2) + scenarios.disjoint_tape("c", 2)
    outcomes, report = refine_set(docs, RefinementConfig(max_iterations=2, parallelism=3), _gateway(entries),
                                  SandboxExecutor({}), out_dir=tmp_path)
    assert [o.final_doc.name for o in outcomes] == ["a", "c"]
    assert [a["tool"] for a in report.aborted] == ["b"]
    assert "TapeExhausted" in report.aborted[0]["error"]
    assert not (tmp_path / "b" / "final.json").exists()


def test_refine_set_duplicate_names_rejected():
    doc = documentation_from_dict(scenarios.simple_tool("a"))
    with pytest.raises(SchemaError):
        refine_set([doc, doc], RefinementConfig(), _gateway([]), SandboxExecutor({}))


def test_parallelism_does_not_change_trajectories(tmp_path):
    names = ("a", "b", "c", "d")
    docs = [documentation_from_dict(scenarios.simple_tool(n)) for n in names]
    entries = [e for n in names for e in scenarios.disjoint_tape(n, 3)]
    for par in (1, 4):
        refine_set(docs, RefinementConfig(max_iterations=3, parallelism=par), _gateway(entries),
                   SandboxExecutor({}), out_dir=tmp_path / f"p{par}")
    for n in names:
        assert (tmp_path / "p1" / n / "trajectory.jsonl").read_bytes() == \
               (tmp_path / "p4" / n / "trajectory.jsonl").read_bytes()


@pytest.mark.parametrize("name, expected", [("a/b", "a_b"), ("..", "_.."), ("ok-name_1.x", "ok-name_1.x")])
def test_tool_dirname(name, expected):
    assert tool_dirname(name) == expected


_SLOW_RUN = r"""
import json, sys, time
sys.path.insert(0, {tests!r})
import scenarios
from docrefine.config import RefinementConfig
from docrefine.engine import refine_tool
from docrefine.executor import SandboxExecutor
from docrefine.gateway import Gateway, MockBackend, Tape
from docrefine.model import documentation_from_dict

class SlowExecutor(SandboxExecutor):
    def execute(self, instance, doc):
        time.sleep(0.3)
        return super().execute(instance, doc)

doc = documentation_from_dict(scenarios.simple_tool("slow"))
gw = Gateway(MockBackend(Tape.from_json(json.dumps(scenarios.disjoint_tape("slow", 50)))))
refine_tool(doc, RefinementConfig(max_iterations=50), gw.scoped("slow"), SlowExecutor({{}}), trajectory_path={path!r})
"""


@pytest.mark.slow
def test_killed_run_leaves_loadable_prefix(tmp_path):
    import signal
    import subprocess
    import sys
    import time
    from pathlib import Path

    path = tmp_path / "traj.jsonl"
    code = _SLOW_RUN.format(tests=str(Path(__file__).parent), path=str(path))
    proc = subprocess.Popen([sys.executable, "-c", code])
    try:
        deadline = time.monotonic() + 20
        while time.monotonic() < deadline:
            if path.exists() and path.read_bytes().count(b"\n") >= 2:
                break
            time.sleep(0.05)
        proc.send_signal(signal.SIGKILL)
    finally:
        proc.wait()
    rows = load_trajectory(path)
    assert len(rows) >= 2
    assert [r["iteration"] for r in rows] == list(range(1, len(rows) + 1))

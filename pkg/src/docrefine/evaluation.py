"""Correct-path rate, judge win rate, BM25 tool retrieval with NDCG, and a minimal trace runner."""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

from docrefine import kernels
from docrefine.agents import parse_agent_reply
from docrefine.errors import AgentOutputError, SchemaError
from docrefine.gateway import ChatExchange
from docrefine.metrics import tokenize
from docrefine.model import ExplorationInstance, ToolDocumentation, ToolResponse
from docrefine.templates import TemplateSet


@dataclass(frozen=True)
class ToolCallTrace:
    task_id: str
    calls: list[str]
    final_answer: str = ""
    flagged: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"task_id": self.task_id, "calls": list(self.calls), "final_answer": self.final_answer,
                "flagged": self.flagged}


@dataclass(frozen=True)
class GroundTruthPath:
    task_id: str
    path: list[str]


# -- correct path rate -------------------------------------------------------


def is_correct_path(calls: Sequence[str], path: Sequence[str]) -> bool:
    """True iff ``path`` occurs in ``calls`` as a (not necessarily contiguous) subsequence."""
    it = iter(calls)
    return all(any(c == p for c in it) for p in path)


def _index_unique(items: Iterable[Any], what: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items:
        if item.task_id in out:
            raise SchemaError(f"duplicate task_id {item.task_id!r} in {what}")
        out[item.task_id] = item
    return out


def correct_path_report(traces: Sequence[ToolCallTrace], gts: Sequence[GroundTruthPath]) -> dict[str, Any]:
    by_task = _index_unique(traces, "traces")
    truth = _index_unique(gts, "ground truth")
    unknown = sorted(set(by_task) - set(truth))
    if unknown:
        raise SchemaError(f"traces for tasks without ground truth: {unknown}")
    per_task = {}
    for tid, gt in truth.items():
        trace = by_task.get(tid)
        per_task[tid] = trace is not None and is_correct_path(trace.calls, gt.path)
    rate = sum(per_task.values()) / len(truth) if truth else 0.0
    return {"cp_rate": rate, "per_task": per_task}


def correct_path_rate(traces: Sequence[ToolCallTrace], gts: Sequence[GroundTruthPath]) -> float:
    """Share of ground-truth tasks whose trace contains the path; a missing trace counts as wrong."""
    return correct_path_report(traces, gts)["cp_rate"]


# -- win rate ----------------------------------------------------------------


@dataclass(frozen=True)
class Judgement:
    task_id: str
    a_first: bool
    verdict: str  # verdict for answers_a: "win", "loss" or "tie"
    flagged: bool = False


def _parse_verdict(raw: str) -> str | None:
    v = raw.strip().strip(".").strip().upper()
    return v if v in ("A", "B", "TIE") else None


def judge_pairwise(
    answers_a: Sequence[str],
    answers_b: Sequence[str],
    tasks: Sequence[str],
    judge: Any,
    seed: int = 0,
    templates: TemplateSet | None = None,
    task_ids: Sequence[str] | None = None,
) -> list[Judgement]:
    if not len(answers_a) == len(answers_b) == len(tasks):
        raise SchemaError("answers_a, answers_b and tasks must be aligned")
    templates = templates or TemplateSet.default()
    rng = random.Random(seed)
    out = []
    for k, (task, a, b) in enumerate(zip(tasks, answers_a, answers_b)):
        a_first = rng.random() < 0.5
        first, second = (a, b) if a_first else (b, a)
        system = templates.render("judge", task=task, answer_a=first, answer_b=second)
        user = "Reply with exactly one of: A, B, TIE"
        verdict = None
        for attempt in range(2):
            raw = judge.chat(ChatExchange(system, user if not attempt else user + ". Nothing else.", role="judge"))
            verdict = _parse_verdict(raw)
            if verdict is not None:
                break
        tid = task_ids[k] if task_ids else str(k)
        if verdict is None:
            out.append(Judgement(tid, a_first, "tie", flagged=True))
        elif verdict == "TIE":
            out.append(Judgement(tid, a_first, "tie"))
        else:
            a_won = (verdict == "A") == a_first
            out.append(Judgement(tid, a_first, "win" if a_won else "loss"))
    return out


def win_rate(answers_a, answers_b, tasks, judge, seed: int = 0, templates: TemplateSet | None = None) -> float:
    """(wins + 0.5 * ties) / tasks for ``answers_a``, with seeded A/B presentation order."""
    js = judge_pairwise(answers_a, answers_b, tasks, judge, seed, templates)
    if not js:
        return 0.0
    return sum(1.0 if j.verdict == "win" else 0.5 if j.verdict == "tie" else 0.0 for j in js) / len(js)


# -- retrieval ---------------------------------------------------------------


@dataclass
class RetrievalCorpus:
    docs: list[tuple[str, str]]
    queries: dict[str, str]
    qrels: dict[str, set[str]] = field(default_factory=dict)


class Scorer(Protocol):
    def scores(self, query: str) -> list[float]: ...


class BM25Index:
    """Okapi BM25 over an inverted index (postings grouped by term)."""

    def __init__(self, texts: Sequence[str], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        tokenized = [tokenize(t) for t in texts]
        self.n_docs = len(tokenized)
        self.vocab: dict[str, int] = {}
        postings: list[list[tuple[int, int]]] = []
        for d, toks in enumerate(tokenized):
            for term, tf in Counter(toks).items():
                tid = self.vocab.setdefault(term, len(self.vocab))
                if tid == len(postings):
                    postings.append([])
                postings[tid].append((d, tf))
        ptr = [0]
        docs: list[int] = []
        tfs: list[float] = []
        for plist in postings:
            for d, tf in plist:
                docs.append(d)
                tfs.append(float(tf))
            ptr.append(len(docs))
        doc_len = [float(len(t)) for t in tokenized]
        self.avgdl = (sum(doc_len) / self.n_docs) if self.n_docs else 0.0
        n = self.n_docs
        self.idf = [math.log((n - (ptr[t + 1] - ptr[t]) + 0.5) / ((ptr[t + 1] - ptr[t]) + 0.5) + 1.0)
                    for t in range(len(postings))]
        self._ptr = kernels.int_buffer(ptr)
        self._docs = kernels.int_buffer(docs)
        self._tfs = kernels.float_buffer(tfs)
        self._len = kernels.float_buffer(doc_len)
        self._idf = kernels.float_buffer(self.idf)

    def scores(self, query: str) -> list[float]:
        terms = [self.vocab[t] for t in tokenize(query) if t in self.vocab]
        if not terms or self.avgdl == 0.0:
            return [0.0] * self.n_docs
        return list(kernels.bm25_scores(self._ptr, self._docs, self._tfs, self._len, self._idf,
                                        kernels.int_buffer(terms), self.k1, self.b, self.avgdl))


def rank_by_scores(names: Sequence[str], scores: Sequence[float]) -> list[str]:
    order = sorted(range(len(names)), key=lambda i: (-scores[i], names[i]))
    return [names[i] for i in order]


def bm25_rank(corpus: RetrievalCorpus, query_id: str, scorer: Scorer | None = None) -> list[str]:
    """All tool names ranked by score, ties broken by name ascending."""
    if not corpus.docs:
        raise SchemaError("retrieval corpus is empty")
    if query_id not in corpus.queries:
        raise KeyError(f"unknown query_id {query_id!r}")
    scorer = scorer or BM25Index([text for _, text in corpus.docs])
    return rank_by_scores([n for n, _ in corpus.docs], scorer.scores(corpus.queries[query_id]))


def ndcg_at_k(ranked: Sequence[str], relevant: set[str] | frozenset[str], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not relevant:
        return 0.0
    dcg = sum(1.0 / math.log2(r + 1) for r, name in enumerate(ranked[:k], 1) if name in relevant)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def retrieval_report(corpus: RetrievalCorpus, ks: Sequence[int], scorer: Scorer | None = None) -> dict[str, Any]:
    missing = sorted(set(corpus.qrels) - set(corpus.queries))
    if missing:
        raise SchemaError(f"qrels for unknown queries: {missing}")
    scorer = scorer or BM25Index([text for _, text in corpus.docs])
    per_query: dict[str, dict[str, float]] = {}
    for qid in sorted(corpus.qrels):
        ranked = bm25_rank(corpus, qid, scorer)
        per_query[qid] = {f"ndcg@{k}": ndcg_at_k(ranked, corpus.qrels[qid], k) for k in ks}
    n = len(per_query)
    report: dict[str, Any] = {f"ndcg@{k}": (sum(v[f"ndcg@{k}"] for v in per_query.values()) / n if n else 0.0)
                              for k in ks}
    report["per_query"] = per_query
    return report


# -- trace runner ------------------------------------------------------------


def run_trace(
    task: str,
    docs: Sequence[ToolDocumentation],
    gateway: Any,
    executor: Any,
    max_steps: int,
    task_id: str = "",
    templates: TemplateSet | None = None,
) -> ToolCallTrace:
    """Let the solver call tools until it finishes or ``max_steps`` calls are made."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    templates = templates or TemplateSet.default()
    by_name = {d.name: d for d in docs}
    tools_text = "\n\n".join(d.render() for d in docs)
    calls: list[str] = []
    observations: list[str] = []
    while len(calls) < max_steps:
        system = templates.render("solver", tools=tools_text, task=task, observations="\n".join(observations))
        decision = None
        for attempt in range(2):
            user = "Decide the next step." if not attempt else "Decide the next step. Reply with only the JSON object."
            raw = gateway.chat(ChatExchange(system, user, role="solver"))
            try:
                decision = parse_agent_reply(raw, ["action"])
            except AgentOutputError:
                continue
            if decision["action"] in ("call", "finish"):
                break
            decision = None
        if decision is None:
            return ToolCallTrace(task_id, calls, "", flagged=True)
        if decision["action"] == "finish":
            answer = decision.get("answer", "")
            return ToolCallTrace(task_id, calls, answer if isinstance(answer, str) else json.dumps(answer))
        name = str(decision.get("tool", ""))
        params = decision.get("parameters") or {}
        calls.append(name)
        doc = by_name.get(name)
        if doc is None:
            resp = ToolResponse(status="tool_error", body=f"unknown tool {name!r}")
        else:
            resp = executor.execute(ExplorationInstance(task, dict(params), len(calls)), doc)
        observations.append(f"{len(calls)}. {name}({json.dumps(params, ensure_ascii=False)}) -> "
                            f"[{resp.status}] {resp.body}")
    return ToolCallTrace(task_id, calls, "")


# -- file formats ------------------------------------------------------------


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: line {n} is not valid JSON: {exc.msg}") from exc
        if not isinstance(row, dict):
            raise SchemaError(f"{path}: line {n} is not an object")
        rows.append(row)
    return rows


def load_traces(path) -> list[ToolCallTrace]:
    try:
        return [ToolCallTrace(str(r["task_id"]), list(r["calls"]), r.get("final_answer", "")) for r in read_jsonl(path)]
    except KeyError as exc:
        raise SchemaError(f"{path}: trace record lacks {exc}") from exc


def load_ground_truth(path) -> list[GroundTruthPath]:
    try:
        return [GroundTruthPath(str(r["task_id"]), list(r["path"])) for r in read_jsonl(path)]
    except KeyError as exc:
        raise SchemaError(f"{path}: ground-truth record lacks {exc}") from exc


def load_queries(path) -> dict[str, str]:
    out = {}
    for r in read_jsonl(path):
        if "query_id" not in r or "text" not in r:
            raise SchemaError(f"{path}: query records need 'query_id' and 'text'")
        out[str(r["query_id"])] = r["text"]
    return out


def load_qrels(path) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for r in read_jsonl(path):
        if "query_id" not in r or "relevant" not in r:
            raise SchemaError(f"{path}: qrels records need 'query_id' and 'relevant'")
        out.setdefault(str(r["query_id"]), set()).update(r["relevant"])
    return out

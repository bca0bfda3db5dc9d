"""Command-line entry point: ``docrefine refine | eval paths | eval retrieval | inspect``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from docrefine import __version__, kernels
from docrefine.config import RefinementConfig
from docrefine.engine import refine_set
from docrefine.errors import DraftError, InfrastructureError, SchemaError
from docrefine.evaluation import (
    RetrievalCorpus,
    correct_path_report,
    load_ground_truth,
    load_qrels,
    load_queries,
    load_traces,
    retrieval_report,
)
from docrefine.executor import HttpExecutor, SandboxExecutor
from docrefine.gateway import Gateway, HttpBackend, MockBackend, Tape
from docrefine.inspection import TrajectoryFormatError, load_trajectory, render_text
from docrefine.model import parse_documentation_set
from docrefine.templates import TemplateSet

log = logging.getLogger("docrefine")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docrefine", description="Iteratively refine tool documentation for LLM use.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("refine", help="refine a documentation set")
    r.add_argument("--tools", required=True, type=Path)
    r.add_argument("--out", required=True, type=Path)
    r.add_argument("--config", type=Path)
    r.add_argument("--max-iters", type=int)
    r.add_argument("--phi", type=float)
    r.add_argument("--tau", type=float)
    r.add_argument("--backend", choices=("mock", "http"))
    r.add_argument("--tape", type=Path, help="scripted tape for the mock backend")
    r.add_argument("--fixtures", type=Path, help="sandbox fixture directory")
    r.add_argument("--parallel", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--templates-dir", type=Path)

    e = sub.add_parser("eval", help="compute evaluation metrics")
    esub = e.add_subparsers(dest="eval_command", parser_class=_Parser)
    p = esub.add_parser("paths", help="correct path rate")
    p.add_argument("--traces", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    q = esub.add_parser("retrieval", help="BM25 retrieval NDCG@k")
    q.add_argument("--docs", required=True, type=Path)
    q.add_argument("--queries", required=True, type=Path)
    q.add_argument("--qrels", required=True, type=Path)
    q.add_argument("--k", default="1,10")

    i = sub.add_parser("inspect", help="render a trajectory file")
    i.add_argument("--trajectory", required=True, type=Path)
    i.add_argument("--format", choices=("text", "json"), default="text")
    return parser


def _config_from_args(args: argparse.Namespace) -> RefinementConfig:
    base = RefinementConfig.load(args.config) if args.config else RefinementConfig()
    return base.updated(
        max_iterations=args.max_iters,
        phi=args.phi,
        tau=args.tau,
        backend=args.backend,
        parallelism=args.parallel,
        seed=args.seed,
    )


def cmd_refine(args: argparse.Namespace) -> int:
    started = datetime.now(timezone.utc)
    config = _config_from_args(args)
    if not args.tools.is_file():
        raise UsageError(f"tools file {args.tools} not found")
    docs = parse_documentation_set(args.tools.read_bytes())
    templates = TemplateSet.with_overrides(args.templates_dir)

    inputs: dict[str, Path] = {"tools": args.tools}
    if args.config:
        inputs["config"] = args.config
    if config.backend == "mock":
        tape = Tape.load(args.tape) if args.tape else Tape([])
        if args.tape:
            inputs["tape"] = args.tape
        backend: Any = MockBackend(tape, seed=config.seed)
    else:
        backend = HttpBackend(chat_model=config.chat_model, embedding_model=config.embedding_model,
                              requests_per_second=config.requests_per_second)
    if args.fixtures is not None:
        if not args.fixtures.is_dir():
            raise UsageError(f"fixtures directory {args.fixtures} not found")
        executor: Any = SandboxExecutor.from_directory(args.fixtures, config.response_truncation_chars)
        for fx in sorted(args.fixtures.glob("*.json")):
            inputs[f"fixtures/{fx.name}"] = fx
    elif config.backend == "mock":
        executor = SandboxExecutor({}, config.response_truncation_chars)
    else:
        executor = HttpExecutor(config.response_truncation_chars, config.tool_deadline_s,
                                os.environ.get("DRAFT_TOOL_TOKEN"))
    if args.templates_dir:
        for t in sorted(args.templates_dir.glob("*.txt")):
            inputs[f"templates/{t.name}"] = t

    _, report = refine_set(docs, config, Gateway(backend), executor, templates, args.out)

    manifest = {
        "tool_version": __version__,
        "config": config.to_dict(),
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items()},
        "backends": {"llm": backend.name, "executor": type(executor).__name__, "kernels": kernels.BACKEND},
        "deterministic": config.backend == "mock",
        "seed": config.seed,
        "started": started.isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    for a in report.aborted:
        print(f"aborted {a['tool']}: {a['error']}", file=sys.stderr)
    return EXIT_PARTIAL if report.aborted else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    if args.eval_command == "paths":
        report = correct_path_report(load_traces(args.traces), load_ground_truth(args.gt))
    elif args.eval_command == "retrieval":
        try:
            ks = [int(k) for k in args.k.split(",") if k.strip()]
        except ValueError:
            raise UsageError(f"--k must be a comma-separated list of integers, got {args.k!r}")
        if not ks or min(ks) < 1:
            raise UsageError("--k values must be >= 1")
        docs = parse_documentation_set(args.docs.read_bytes())
        corpus = RetrievalCorpus([(d.name, d.render()) for d in docs], load_queries(args.queries),
                                 load_qrels(args.qrels))
        report = retrieval_report(corpus, ks)
    else:
        raise UsageError("eval needs a subcommand: paths or retrieval")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        records = load_trajectory(args.trajectory)
        error = None
    except TrajectoryFormatError as exc:
        records, error = exc.valid_prefix, exc
    if args.format == "json":
        print(json.dumps(records, indent=2, ensure_ascii=False))
    else:
        print(render_text(records), end="")
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        if args.command == "refine":
            return cmd_refine(args)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required: refine, eval, inspect", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DraftError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: generate, train, classify, serve, evaluate, compare."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
from pathlib import Path

from . import hl7
from .config import ConfigError, RunConfig
from .backends.naive_bayes import train_naive_bayes
from .jsonl import read_jsonl
from .labels import TumorGroup
from .metrics import compare_runs, score
from .pipeline import record_to_obj, run_batch
from .reports import LabeledReport
from .synth import GeneratorSpec, generate, write_corpus

logger = logging.getLogger(__name__)


def _load_reports(path: Path, fmt: str):
    """Read input reports; returns (records, error_messages)."""
    if fmt == "hl7" or (fmt == "auto" and path.suffix.lower() == ".hl7"):
        records, errors = [], []
        blobs = hl7.split_messages(path.read_bytes())
        if not blobs:
            errors.append(f"{path}: no messages found")
        for i, blob in enumerate(blobs):
            try:
                records.append(hl7.extract_report(hl7.parse_hl7(blob)))
            except ValueError as exc:
                errors.append(f"{path} message {i}: {exc}")
        return records, errors
    records, line_errors = read_jsonl(path)
    return records, [f"{path} line {e.line}: {e.message}" for e in line_errors]


def cmd_generate(args) -> int:
    try:
        spec = GeneratorSpec.from_file(args.spec)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
        corpus = generate(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    paths = write_corpus(corpus, args.output_dir)
    noisy = sum(1 for row in corpus.sidecar if row.noisy)
    print(f"wrote {len(corpus.train)} train / {len(corpus.test)} test reports "
          f"({noisy} noisy labels) to {args.output_dir}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def cmd_train(args) -> int:
    try:
        config = RunConfig.load(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.model_dir:
        config.model_dir = args.model_dir
    records, errors = _load_reports(Path(args.input), args.format)
    for message in errors:
        print(f"warning: {message}", file=sys.stderr)
    corpus = [r for r in records if isinstance(r, LabeledReport)]
    if not corpus:
        print("error: training input has no labeled reports", file=sys.stderr)
        return 1

    Path(config.model_dir).mkdir(parents=True, exist_ok=True)
    trained = 0
    for backend_id, section in dict.fromkeys(config.ensemble.members):
        spec = config.backends[backend_id]
        if spec["type"] != "naive_bayes":
            continue
        model = train_naive_bayes(
            corpus, section,
            alpha=float(spec.get("alpha", 1.0)),
            features=spec.get("features", "unigram"),
            binarize=bool(spec.get("binarize", False)),
            window_tokens=config.ensemble.window_tokens,
            backend_id=backend_id)
        path = config.model_path(backend_id, section)
        model.save(path)
        print(f"trained {backend_id} ({section.value}) on {len(corpus)} reports -> {path}")
        trained += 1
    if trained == 0:
        print("note: roster has no trainable members; nothing to do")
    return 0


def _gold_by_id(records) -> dict[str, TumorGroup]:
    return {r.report_id: r.label for r in records if isinstance(r, LabeledReport)}


def cmd_classify(args) -> int:
    try:
        config = RunConfig.load(args.config)
        if args.workers is not None:
            config.workers = args.workers
        if args.seed is not None:
            config.seed = args.seed
        members = config.build_members(trained=not args.dry_run)
        arbiter = config.build_arbiter()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.dry_run:
        print("configuration valid; resolved roster:")
        for (backend_id, section) in config.ensemble.members:
            print(f"  {backend_id} ({section.value}, type={config.backends[backend_id]['type']})")
        print(f"vote_threshold={config.ensemble.vote_threshold} "
              f"hard_groups={sorted(g.value for g in config.ensemble.hard_groups)} "
              f"window_tokens={config.ensemble.window_tokens} "
              f"arbiter={config.arbiter.mode} workers={config.workers} seed={config.seed}")
        return 0

    records, input_errors = _load_reports(Path(args.input), args.format)
    for message in input_errors:
        print(f"warning: {message}", file=sys.stderr)

    decisions, summary = run_batch(records, members, config.ensemble, arbiter,
                                   workers=config.workers)
    with open(args.output, "w", encoding="utf-8") as fh:
        for record in decisions:
            obj = record_to_obj(record, include_timings=config.include_timings)
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    print(f"classified {summary.n_decided}/{summary.n_input} reports -> {args.output}")
    print(f"  paths: {summary.path_counts}")
    print(f"  arbitrated: {summary.arbitrated} ({summary.arbitrated_fraction:.1%}), "
          f"degraded: {summary.degraded}, errors: {len(summary.errors) + len(input_errors)}")

    if args.summary:
        summary_obj = summary.to_obj(include_timing=config.include_timings)
        summary_obj["input_errors"] = input_errors
        Path(args.summary).write_text(json.dumps(summary_obj, indent=2) + "\n",
                                      encoding="utf-8")

    if args.evaluate:
        gold = _gold_by_id(records)
        pairs = [(gold[r.report_id], r.final_group)
                 for r in decisions if r.report_id in gold]
        if not pairs:
            print("error: --evaluate needs labeled input", file=sys.stderr)
            return 1
        stats = {p: c / summary.n_decided for p, c in summary.path_counts.items()} \
            if summary.n_decided else {}
        report = score(pairs, arbitration_stats=stats)
        eval_path = Path(args.output).with_suffix(".eval.json")
        eval_path.write_text(json.dumps(report.to_obj(), indent=2) + "\n",
                             encoding="utf-8")
        print(f"  weighted P/R/F1: {report.weighted_precision:.4f} "
              f"{report.weighted_recall:.4f} {report.weighted_f1:.4f} -> {eval_path}")

    return 0 if not summary.errors and not input_errors else 1


def cmd_serve(args) -> int:
    import threading

    from .service import PipelineService
    try:
        config = RunConfig.load(args.config)
        members = config.build_members()
        arbiter = config.build_arbiter()
        service = PipelineService(members, config.ensemble, arbiter,
                                  host=args.host, port=args.port,
                                  audit_log=config.audit_log,
                                  include_timings=config.include_timings)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    # the handler only flags the event: shutdown() must not run on the thread
    # that is blocked inside serve_forever
    stop_requested = threading.Event()
    signal.signal(signal.SIGTERM, lambda s, f: stop_requested.set())
    signal.signal(signal.SIGINT, lambda s, f: stop_requested.set())

    service.start()
    print(f"serving on {args.host}:{service.port} "
          f"(endpoints: POST /classify, GET /health, GET /metrics)", flush=True)
    stop_requested.wait()
    print("shutting down; draining in-flight requests", file=sys.stderr)
    service.stop()
    return 0


def cmd_evaluate(args) -> int:
    gold_records, errors = _load_reports(Path(args.gold), "auto")
    for message in errors:
        print(f"warning: {message}", file=sys.stderr)
    gold = _gold_by_id(gold_records)
    if not gold:
        print("error: gold file has no labeled reports", file=sys.stderr)
        return 1
    pairs = []
    with open(args.decisions, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            rid = obj["report_id"]
            if rid in gold:
                pairs.append((gold[rid], TumorGroup(obj["final_group"])))
    if not pairs:
        print("error: no decisions matched the gold set", file=sys.stderr)
        return 1
    report = score(pairs)
    print(json.dumps(report.to_obj(), indent=2))
    if args.output:
        Path(args.output).write_text(json.dumps(report.to_obj(), indent=2) + "\n",
                                     encoding="utf-8")
    return 0


def cmd_compare(args) -> int:
    gold_records, _ = _load_reports(Path(args.gold), "auto")
    gold = _gold_by_id(gold_records)
    if not gold:
        print("error: gold file has no labeled reports", file=sys.stderr)
        return 1
    names = args.names.split(",") if args.names else None
    if names and len(names) != len(args.runs):
        print("error: --names count must match the number of run files", file=sys.stderr)
        return 1
    runs = []
    for i, run_path in enumerate(args.runs):
        rows = []
        with open(run_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                rid = obj["report_id"]
                if rid in gold:
                    rows.append((rid, gold[rid], TumorGroup(obj["final_group"])))
        name = names[i] if names else Path(run_path).stem
        runs.append((name, rows))
    try:
        table = compare_runs(runs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(table.to_text())
    if args.output:
        Path(args.output).write_text(json.dumps(table.to_obj(), indent=2) + "\n",
                                     encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathgrouper",
        description="Tumor-group assignment for pathology reports: "
                    "classifier ensemble with threshold-gated arbitration.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic labeled corpus")
    p.add_argument("--spec", required=True, help="generator spec JSON")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the trainable ensemble members")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="labeled reports (jsonl)")
    p.add_argument("--model-dir", default=None)
    p.add_argument("--format", choices=["auto", "jsonl", "hl7"], default="auto")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify a batch of reports")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="decisions file (jsonl)")
    p.add_argument("--summary", default=None, help="run summary JSON path")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--evaluate", action="store_true",
                   help="score against labels in the input file")
    p.add_argument("--dry-run", action="store_true",
                   help="validate config and print the resolved roster")
    p.add_argument("--format", choices=["auto", "jsonl", "hl7"], default="auto")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("serve", help="run the classification service")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("evaluate", help="score a decisions file against gold labels")
    p.add_argument("--decisions", required=True)
    p.add_argument("--gold", required=True, help="labeled reports (jsonl)")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="compare several runs on one test set")
    p.add_argument("runs", nargs="+", help="decision files to compare")
    p.add_argument("--gold", required=True)
    p.add_argument("--names", default=None, help="comma-separated run names")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

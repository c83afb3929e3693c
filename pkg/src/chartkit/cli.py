"""Command-line entry point wiring the pipeline stages into subcommands.

Every output file is deterministic for fixed inputs and seed; wall-clock
timestamps live only in a separate "meta" block so runs can be compared
byte-for-byte on their "content". Logs go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - py310 fallback
    import tomli as tomllib

from . import corpus, genclient, humaneval, instructions, judge, metrics, packaging, qualitycheck
from .jsonl import read_jsonl, write_jsonl
from .sandbox import SandboxConfig

log = logging.getLogger("chartkit")

USER_ERRORS = (
    corpus.UnknownSource,
    corpus.ConflictingRecord,
    genclient.MissingTemplate,
    genclient.AuthError,
    genclient.RateLimitedExhausted,
    metrics.EmptyInput,
    metrics.UnknownGoldLabel,
    packaging.EmptyInput,
    packaging.NonDivisible,
    packaging.MissingChart,
    qualitycheck.SampleTooLarge,
    judge.EmptyCandidate,
    humaneval.UnknownAnnotator,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
)


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _write_report(path: str | Path, content: dict, run_config: dict) -> None:
    """Deterministic content block plus a separate timestamped meta block."""
    content = dict(content)
    content["run_config"] = run_config
    doc = {"content": content, "meta": {"created_at": _utc_now()}}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_config(argv: list[str]) -> dict:
    """Pre-scan for --config so its values can become subparser defaults."""
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            with open(argv[i + 1], "rb") as f:
                return tomllib.load(f)
        if arg.startswith("--config="):
            with open(arg.split("=", 1)[1], "rb") as f:
                return tomllib.load(f)
    return {}


def _section_defaults(config: dict, section: str) -> dict:
    return {k.replace("-", "_"): v for k, v in config.get(section, {}).items()}


# ----------------------------------------------------------------- commands


def cmd_ingest(args: argparse.Namespace) -> int:
    source_map = corpus.load_source_map(args.source_map) if args.source_map else None
    manifest = corpus.ingest_source(args.directory, args.source, source_map, jobs=args.jobs)
    for warning in manifest.warnings:
        log.warning("%s", warning)
    run_config = {
        "subcommand": "ingest",
        "source": args.source,
        "source_map": args.source_map,
        "jobs": args.jobs,
    }
    corpus.write_manifest(manifest, args.out, run_config=run_config)
    log.info("ingested %d charts (%d skipped) -> %s", manifest.total, manifest.skipped, args.out)
    return 0


def _parse_tasks(spec: str) -> list[genclient.TaskKind]:
    return [genclient.TaskKind(name.strip()) for name in spec.split(",") if name.strip()]


def cmd_generate(args: argparse.Namespace) -> int:
    manifest = corpus.read_manifest(args.corpus)
    tasks = _parse_tasks(args.tasks)
    requests = [
        genclient.GenerationRequest.create(rec.chart_id, kind, rec.image_path, args.model)
        for rec in manifest.records
        for kind in tasks
    ]
    if args.replay:
        transport = genclient.ReplayTransport.from_file(args.replay)
        source_ts = {
            e["request"]["request_id"]: e.get("timestamp", "") for e in read_jsonl(args.replay)
        }
    else:
        if not os.environ.get(genclient.API_KEY_ENV):
            raise ValueError(f"{genclient.API_KEY_ENV} is not set (or use --replay)")
        transport = genclient.HttpTransport(args.endpoint)
        source_ts = {}
    limiter = genclient.TokenBucket.per_minute(args.rpm) if args.rpm else None
    policy = genclient.RetryPolicy(max_attempts=args.max_attempts)
    entries = genclient.run_generation(
        requests,
        policy,
        transport,
        limiter=limiter,
        concurrency=args.concurrency,
        timestamp=_utc_now() if not args.replay else "",
    )
    for entry in entries:
        rid = entry["request"]["request_id"]
        if rid in source_ts:
            entry["timestamp"] = source_ts[rid]
    n = genclient.write_transcript(args.out, entries)
    failures = sum(1 for e in entries if e["response"]["text"] is None)
    log.info("wrote %d transcript entries (%d failed) -> %s", n, failures, args.out)
    return 0


def cmd_parse(args: argparse.Namespace) -> int:
    records = []
    rejects = []
    for entry in read_jsonl(args.transcript):
        request = entry["request"]
        response = genclient.RawResponse.from_json(entry["response"])
        if response.text is None:
            rejects.append(
                {
                    "request_id": request["request_id"],
                    "chart_id": request["chart_id"],
                    "task_kind": request["task_kind"],
                    "error": entry.get("error", "empty response"),
                    "raw_text": None,
                }
            )
            continue
        kind = genclient.TaskKind(request["task_kind"])
        generator = instructions.GeneratorInfo(
            model_name=request["model_name"],
            template_version=request["template_version"],
            timestamp=entry.get("timestamp", ""),
        )
        try:
            outcome = instructions.parse_response(response, kind, request["chart_id"], generator)
        except (instructions.UnparseableResponse, instructions.SchemaViolation) as exc:
            rejects.append(
                {
                    "request_id": request["request_id"],
                    "chart_id": request["chart_id"],
                    "task_kind": request["task_kind"],
                    "error": f"{type(exc).__name__}: {exc}",
                    "raw_text": exc.raw_text,
                }
            )
            continue
        records.extend(outcome.records)
    records.sort(key=lambda r: r.record_id)
    write_jsonl(args.out, (r.to_json() for r in records))
    rejects_path = args.rejects or str(Path(args.out).with_suffix("")) + ".rejects.jsonl"
    if rejects:
        write_jsonl(rejects_path, rejects)
    log.info("parsed %d records, %d rejects -> %s", len(records), len(rejects), args.out)
    return 0


def _sandbox_from_args(args: argparse.Namespace) -> SandboxConfig:
    if args.interpreter_cmd:
        return SandboxConfig.from_command(args.interpreter_cmd, timeout_ms=args.timeout_ms)
    return SandboxConfig(timeout_ms=args.timeout_ms)


def cmd_validate(args: argparse.Namespace) -> int:
    records = [instructions.InstructionRecord.from_json(obj) for obj in read_jsonl(args.records)]
    cfg = _sandbox_from_args(args)
    metric_cfg = metrics.MetricConfig(epsilon=args.epsilon)
    reports = qualitycheck.validate_many(records, cfg, metric_cfg, jobs=args.jobs)
    write_jsonl(args.out, (rep.to_json() for rep in reports))
    invalid = sum(1 for rep in reports if rep.verdict is qualitycheck.Verdict.INVALID)
    log.info("validated %d records (%d invalid) -> %s", len(reports), invalid, args.out)
    return 0


def cmd_package(args: argparse.Namespace) -> int:
    records = [instructions.InstructionRecord.from_json(obj) for obj in read_jsonl(args.records)]
    charts = corpus.read_manifest(args.corpus).by_chart_id()
    reports = None
    if args.reports:
        reports = {
            rep["record_id"]: qualitycheck.ValidationReport.from_json(rep)
            for rep in read_jsonl(args.reports)
        }
    train_ratio, val_ratio = (float(x) for x in args.split.split(","))
    cfg = packaging.PackagingConfig(
        train_ratio=train_ratio,
        val_ratio=val_ratio,
        seed=args.seed,
        filter_policy=args.filter,
    )
    pkg = packaging.package(records, charts, cfg, reports)
    paths = packaging.write_dataset(pkg, args.out_dir)
    run_config = {
        "subcommand": "package",
        "split": args.split,
        "seed": args.seed,
        "filter": args.filter,
    }
    _write_report(Path(args.out_dir) / "manifest.json", pkg.manifest.to_json(), run_config)
    log.info(
        "packaged %d train / %d val -> %s", pkg.manifest.n_train, pkg.manifest.n_val, args.out_dir
    )
    for name, path in paths.items():
        log.info("  %s: %s", name, path)
    return 0


def _write_per_item_csv(path: str | Path, rows: list[dict]) -> None:
    import csv

    if not rows:
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def cmd_score(args: argparse.Namespace) -> int:
    items = [metrics.PredictionItem.from_json(obj) for obj in read_jsonl(args.preds)]
    cfg = metrics.MetricConfig(epsilon=args.epsilon)
    run_config = {"subcommand": "score", "metric": args.metric, "epsilon": args.epsilon}
    if args.metric == "qa":
        result = metrics.score_qa(items, cfg).to_json()
    elif args.metric == "factcheck":
        labels = [l.strip() for l in args.labels.split(",")]
        run_config["labels"] = labels
        result = metrics.score_fact_check(items, labels).to_json()
    elif args.metric == "pot":
        result = metrics.score_pot(items, cfg, _sandbox_from_args(args)).to_json()
    elif args.metric == "table":
        scores = [metrics.markdown_table_f1(it.predicted, it.gold, cfg) for it in items]
        result = {
            "metric_name": "markdown_table_f1",
            "mean_f1": round(sum(s.f1 for s in scores) / len(scores), 4) if scores else 0.0,
            "n_items": len(scores),
            "n_parse_failures": sum(s.parse_failed for s in scores),
            "per_item": [
                {"item_id": it.item_id, "f1": round(s.f1, 4), "parse_failed": s.parse_failed}
                for it, s in zip(items, scores)
            ],
        }
    else:  # argparse choices guard this
        raise ValueError(f"unknown metric {args.metric}")
    _write_report(args.out, result, run_config)
    csv_path = args.per_item_csv or str(Path(args.out).with_suffix("")) + ".per_item.csv"
    _write_per_item_csv(csv_path, result["per_item"])
    log.info("scored %d items -> %s (per-item: %s)", len(items), args.out, csv_path)
    return 0


def _load_outputs(path: str) -> dict[str, str]:
    outputs = {}
    for obj in read_jsonl(path):
        outputs[str(obj["item_id"])] = str(obj["output"])
    return outputs


def cmd_judge(args: argparse.Namespace) -> int:
    kind = judge.JudgeKind.SUMMARY_RUBRIC if args.task == "summary" else judge.JudgeKind.OPEN_CQA_RUBRIC
    if args.replay:
        scores, excluded = judge.scores_from_transcript(read_jsonl(args.replay))
    else:
        if not args.preds_a or not args.preds_b:
            raise ValueError("--preds-a and --preds-b are required without --replay")
        if not os.environ.get(genclient.API_KEY_ENV):
            raise ValueError(f"{genclient.API_KEY_ENV} is not set (or use --replay)")
        outputs_a = _load_outputs(args.preds_a)
        outputs_b = _load_outputs(args.preds_b)
        shared = sorted(set(outputs_a) & set(outputs_b))
        tasks = judge.make_tasks(kind, [(i, outputs_a[i], outputs_b[i]) for i in shared], args.seed)
        transport = genclient.HttpTransport(args.endpoint)
        limiter = genclient.TokenBucket.per_minute(args.rpm) if args.rpm else None
        entries, scores, excluded = judge.run_judge(tasks, transport, args.judge_model, limiter=limiter)
        if args.transcript_out:
            write_jsonl(args.transcript_out, entries)
    report = judge.judge_report(scores, kind, excluded)
    run_config = {"subcommand": "judge", "task": args.task, "judge_model": args.judge_model}
    _write_report(args.out, report, run_config)
    log.info("judged %d items (%d excluded) -> %s", report["n_scored"], excluded, args.out)
    return 0


def cmd_serve_anno(args: argparse.Namespace) -> int:
    from .server import create_server

    server = create_server(args.study, port=args.port, ui_dir=args.ui_dir)
    host, port = server.server_address[:2]
    log.info("annotation service on http://%s:%s (study: %s)", host, port, args.study)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        log.info("shutting down")
    finally:
        server.server_close()
    return 0


def _render_report(doc: dict) -> str:
    content = doc.get("content", doc)
    lines = []
    name = content.get("metric_name") or content.get("kind") or "report"
    lines.append(f"== {name} ==")
    if "overall" in content:
        lines.append(f"overall: {content['overall']:.2f}")
        for tag, value in sorted(content.get("per_split", {}).items()):
            lines.append(f"  {tag}: {value:.2f}")
        lines.append(f"items: {content.get('n_items', '?')}")
    elif "means" in content and "axes" in content:
        for candidate, axis_means in sorted(content["means"].items()):
            lines.append(f"{candidate}:")
            for axis, value in sorted(axis_means.items()):
                lines.append(f"  {axis}: {value:.2f}")
        lines.append(f"scored: {content.get('n_scored', '?')}, excluded: {content.get('n_excluded', 0)}")
    elif "per_task_counts" in content:
        lines.append("per-task counts:")
        for task, count in sorted(content["per_task_counts"].items()):
            lines.append(f"  {task}: {count}")
        lines.append(f"train/val: {content.get('n_train')}/{content.get('n_val')}")
        lines.append(f"training config: {content.get('training_config_echo')}")
    elif "mean_f1" in content:
        lines.append(f"mean F1: {content['mean_f1']:.4f} over {content.get('n_items')} items")
        lines.append(f"parse failures: {content.get('n_parse_failures', 0)}")
    else:
        lines.append(json.dumps(content, indent=2, sort_keys=True))
    if "meta" in doc:
        lines.append(f"(created {doc['meta'].get('created_at')})")
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.file, "r", encoding="utf-8") as f:
        doc = json.load(f)
    print(_render_report(doc))
    return 0


# ------------------------------------------------------------------- parser


def build_parser(config: dict) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chartkit",
        description="Chart instruction-dataset synthesis, validation, packaging, and evaluation.",
    )
    parser.add_argument("--config", help="TOML config file; sections per subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    created: dict[str, argparse.ArgumentParser] = {}

    def subparser(name: str, func, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func)
        created[name] = p
        return p

    p = subparser("ingest", cmd_ingest, help="ingest a directory of chart images")
    p.add_argument("directory")
    p.add_argument("--source", required=True)
    p.add_argument("--source-map", default=None)
    p.add_argument("--out", default="corpus.jsonl")
    p.add_argument("--jobs", type=int, default=1)

    p = subparser("generate", cmd_generate, help="call the multimodal API over the corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks", default=",".join(k.value for k in genclient.TaskKind))
    p.add_argument("--model", default=genclient.DEFAULT_MODEL)
    p.add_argument("--endpoint", default="https://generativelanguage.googleapis.com")
    p.add_argument("--rpm", type=float, default=0)
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--max-attempts", type=int, default=5)
    p.add_argument("--replay", default=None, help="transcript to replay instead of live calls")
    p.add_argument("--out", default="transcript.jsonl")

    p = subparser("parse", cmd_parse, help="parse raw responses into instruction records")
    p.add_argument("--transcript", required=True)
    p.add_argument("--out", default="records.jsonl")
    p.add_argument("--rejects", default=None)

    p = subparser("validate", cmd_validate, help="schema-check and execute records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default="reports.jsonl")
    p.add_argument("--interpreter-cmd", default=None)
    p.add_argument("--timeout-ms", type=int, default=10_000)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--jobs", type=int, default=1)

    p = subparser("package", cmd_package, help="assemble train/val splits and manifest")
    p.add_argument("--records", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--reports", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="0.8,0.2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filter", choices=packaging.FILTER_POLICIES, default="valid-only")

    p = subparser("score", cmd_score, help="score model predictions")
    p.add_argument("preds")
    p.add_argument("--metric", choices=("qa", "factcheck", "pot", "table"), required=True)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--labels", default="supports,refutes")
    p.add_argument("--interpreter-cmd", default=None)
    p.add_argument("--timeout-ms", type=int, default=10_000)
    p.add_argument("--out", default="score_report.json")
    p.add_argument("--per-item-csv", default=None)

    p = subparser("judge", cmd_judge, help="LLM-judge two models' outputs")
    p.add_argument("--task", choices=("summary", "opencqa"), default="summary")
    p.add_argument("--preds-a", default=None)
    p.add_argument("--preds-b", default=None)
    p.add_argument("--replay", default=None, help="recorded judge transcript")
    p.add_argument("--judge-model", default="gpt-4")
    p.add_argument("--endpoint", default="https://generativelanguage.googleapis.com")
    p.add_argument("--rpm", type=float, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--transcript-out", default=None)
    p.add_argument("--out", default="judge_report.json")

    p = subparser("serve-anno", cmd_serve_anno, help="serve the blinded annotation study")
    p.add_argument("--study", required=True)
    p.add_argument("--port", type=int, default=8770)
    p.add_argument("--ui-dir", default=None)

    p = subparser("report", cmd_report, help="render a JSON result file")
    p.add_argument("file")

    # config-file values become defaults once every argument is registered,
    # so explicit flags still win
    for name, sub_parser in created.items():
        defaults = _section_defaults(config, name)
        if defaults:
            sub_parser.set_defaults(**defaults)

    return parser


def run(argv: list[str]) -> int:
    try:
        config = _load_config(argv)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: cannot load config: {exc}", file=sys.stderr)
        return 1
    parser = build_parser(config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        log.error("%s", exc)
        return 1
    except Exception:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

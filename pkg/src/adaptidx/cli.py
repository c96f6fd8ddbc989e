"""Command-line surface: dataset generation, upload, workload runs, reports.

Subcommands:
  gen-synthetic   write a numeric dataset file
  gen-uservisits  write a web-log-like dataset file
  upload          split a dataset into blocks across a cluster directory
  run             execute a jobs file against an uploaded cluster
  report          pretty-print a JSON run report

A jobs file is a JSON document: either a list of job objects or
{"policy": {...}, "jobs": [...]}. Each job object:

    {
      "id": "job1",                      # optional
      "predicate": {"attribute": "a", "low": 3, "high": 4},
      "projection": ["a", "b"] | "all",
      "offer_rate": 0.25                 # constant-rate job
      | "eager": true                    # cost-model-driven rate
      | "selectivity_threshold": 0.8     # selectivity-driven offers
    }

The workload-level "policy" object supplies defaults: mode
(constant|eager|selectivity), rho, target_seconds, t_fsw, t_idx_overhead,
selectivity_threshold.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cluster import Cluster, ClusterConfig
from .errors import AdaptidxError
from .execution import JobSpec, Predicate
from .indexer import OFFER_RATE, SELECTIVITY, OfferPolicy
from .runner import CONSTANT, EAGER, WorkloadRunner, write_reports
from .workloads import Dataset, gen_synthetic, gen_uservisits_like


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    dataset = gen_synthetic(args.rows, args.seed)
    size = dataset.to_file(args.out)
    print(f"wrote {args.rows} rows ({size} bytes) to {args.out}")
    return 0


def _cmd_gen_uservisits(args: argparse.Namespace) -> int:
    dataset = gen_uservisits_like(args.rows, args.seed)
    size = dataset.to_file(args.out)
    print(f"wrote {args.rows} rows ({size} bytes) to {args.out}")
    return 0


def _cmd_upload(args: argparse.Namespace) -> int:
    config = ClusterConfig.from_file(args.config)
    dataset = Dataset.from_file(args.dataset)
    cluster = Cluster(config, args.root)
    attrs = [a for a in (args.index_attrs or "").split(",") if a]
    registry = cluster.upload_dataset(dataset, attrs)
    cluster.close()
    print(
        f"uploaded {registry.block_count} blocks x {config.replication_factor} replicas "
        f"({registry.total_records} records) to {args.root}"
    )
    return 0


def _parse_job(doc: dict, index: int, defaults: dict, schema) -> tuple[JobSpec, str]:
    pred = doc["predicate"]
    predicate = Predicate(pred["attribute"], pred["low"], pred["high"])
    projection = doc.get("projection", "all")
    mode = defaults.get("mode", CONSTANT)
    rho = float(doc.get("rho", defaults.get("rho", 0.1)))
    threshold = float(
        doc.get("selectivity_threshold", defaults.get("selectivity_threshold", 0.8))
    )
    if "offer_rate" in doc:
        mode, rho = CONSTANT, float(doc["offer_rate"])
    elif doc.get("eager"):
        mode = EAGER
    elif "selectivity_threshold" in doc:
        mode = SELECTIVITY
    policy = OfferPolicy(
        mode=SELECTIVITY if mode == SELECTIVITY else OFFER_RATE,
        rho=rho,
        selectivity_threshold=threshold,
    )
    job = JobSpec(
        job_id=str(doc.get("id", f"job{index}")),
        predicate=predicate,
        projection=schema.names if projection == "all" else tuple(projection),
        policy=policy,
        collect_output=False,
    )
    return job, mode


def _cmd_run(args: argparse.Namespace) -> int:
    cluster = Cluster.open(args.root)
    if cluster.registry is None:
        print(f"error: no dataset uploaded under {args.root}", file=sys.stderr)
        return 2
    with open(args.jobs) as f:
        raw = json.load(f)
    docs = raw["jobs"] if isinstance(raw, dict) else raw
    defaults = raw.get("policy", {}) if isinstance(raw, dict) else {}

    schema = cluster.registry.schema
    jobs = [
        _parse_job(doc, i, defaults, schema) for i, doc in enumerate(docs, start=1)
    ]

    runner = WorkloadRunner(cluster)
    runner.apply_policy_overrides(
        t_fsw=defaults.get("t_fsw"),
        t_idx_overhead=defaults.get("t_idx_overhead"),
        target_seconds=defaults.get("target_seconds"),
    )

    rows = []
    failed = False
    for job, mode in jobs:
        outcome = runner.run_job(job, mode, plan_dump=args.plan_dump)
        rows.append(outcome.metrics)
        print(
            f"{outcome.metrics.job_id}: indexed {outcome.metrics.blocks_indexed_after}"
            f"/{outcome.metrics.blocks_total} blocks, "
            f"emitted {outcome.metrics.records_emitted} records, "
            f"simulated {outcome.metrics.simulated_seconds:.3f}s"
        )
        if outcome.metrics.failed:
            print(f"{outcome.metrics.job_id} failed: {outcome.metrics.error}", file=sys.stderr)
            failed = True
            break

    csv_path, json_path = write_reports(rows, args.report)
    print(f"report: {csv_path} {json_path}")
    cluster.close()
    return 1 if failed else 0


def _cmd_report(args: argparse.Namespace) -> int:
    with open(args.json) as f:
        data = json.load(f)
    rows = data["jobs"]
    if not rows:
        print("empty report")
        return 0
    cols = [
        "job_id",
        "mode",
        "blocks_indexed_after",
        "blocks_total",
        "rho_used",
        "predicted_seconds",
        "simulated_seconds",
        "records_emitted",
        "bytes_read",
    ]
    widths = {c: max(len(c), *(len(_fmt(r.get(c))) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(_fmt(r.get(c)).ljust(widths[c]) for c in cols))
    return 0


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaptidx",
        description="Adaptive block-level clustered indexing on a simulated cluster",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="generate the numeric dataset")
    g.add_argument("--rows", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(fn=_cmd_gen_synthetic)

    u = sub.add_parser("gen-uservisits", help="generate the web-log-like dataset")
    u.add_argument("--rows", type=int, required=True)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", type=Path, required=True)
    u.set_defaults(fn=_cmd_gen_uservisits)

    up = sub.add_parser("upload", help="split a dataset into blocks on a cluster")
    up.add_argument("--dataset", type=Path, required=True)
    up.add_argument("--root", type=Path, required=True)
    up.add_argument("--config", type=Path, required=True)
    up.add_argument(
        "--index-attrs",
        default="",
        help="comma-separated attributes indexed at upload, one per replica",
    )
    up.set_defaults(fn=_cmd_upload)

    r = sub.add_parser("run", help="run a jobs file against an uploaded cluster")
    r.add_argument("--root", type=Path, required=True)
    r.add_argument("--jobs", type=Path, required=True)
    r.add_argument("--report", type=Path, default=Path("run_report"))
    r.add_argument("--plan-dump", action="store_true", help="print planned assignments")
    r.set_defaults(fn=_cmd_run)

    rep = sub.add_parser("report", help="pretty-print a JSON run report")
    rep.add_argument("--json", type=Path, required=True)
    rep.set_defaults(fn=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except AdaptidxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

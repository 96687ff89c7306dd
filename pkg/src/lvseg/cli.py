"""Command-line entry point: ``lvseg <command> ...``.

Exit codes: 0 success, 1 user error (bad input, config or missing files),
2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .pipeline import (anova_summary, build_store, evaluate_runs, find_run_dirs, ipb_cohort,
                       make_phantom_cohort, metrics_csv, plan_from_manifests, preprocess_cohort,
                       train_plans, write_json)
from .report import ReportError, normalize_rows, read_metrics, write_report
from .training import ExperimentPlan

log = logging.getLogger("lvseg")

USER_ERRORS = (ConfigError, ReportError, ValueError, KeyError, FileNotFoundError, NotADirectoryError,
               json.JSONDecodeError)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_config(args, cfg: PipelineConfig) -> int:
    if args.profile == "paper":
        cfg = PipelineConfig.paper_profile()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    text = cfg.to_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_phantom(args, cfg: PipelineConfig) -> int:
    out = Path(args.out or Path(cfg.paths.work_dir) / "phantoms")
    names = args.cohort or [c.name for c in cfg.phantom.cohorts]
    for name in names:
        c = cfg.phantom.cohort(name)
        m = make_phantom_cohort(name, c.n, c.phantom_spec(cfg.phantom.spec), c.site_profiles(),
                                cfg.cohort_seed(name), cfg.phantom.jitter, out / name)
        print(f"{name}: {len(m['cases'])} cases -> {out / name / 'manifest.json'}")
    return 0


def cmd_preprocess(args, cfg: PipelineConfig) -> int:
    m = preprocess_cohort(args.manifest, args.out, dump_map=args.dump_map)
    print(f"{m['dataset']}: {len(m['cases'])} cases standardized -> {Path(args.out) / 'manifest.json'}")
    return 0


def cmd_ipb(args, cfg: PipelineConfig) -> int:
    ipb = cfg.ipb
    overrides = {k: v for k, v in (("csf_threshold", args.threshold), ("erosion_diameter_mm", args.erosion_mm),
                                   ("center_distance_mm", args.distance_mm)) if v is not None}
    params = replace(ipb, **overrides).params(args.acpc_z)
    m = ipb_cohort(args.manifest, args.out, params, trace_dir=args.trace_dir)
    n_ok = sum(1 for e in m["cases"].values() if e.get("ss"))
    print(f"{m['dataset']}: {n_ok}/{len(m['cases'])} SS masks, {len(m['ipb_failures'])} failures")
    for cid, msg in sorted(m["ipb_failures"].items()):
        print(f"  {cid}: {msg}")
    return 0


def cmd_train(args, cfg: PipelineConfig) -> int:
    store, manifests = build_store(args.manifest)
    del store
    if args.plan:
        data = json.loads(Path(args.plan).read_text())
        plans = [ExperimentPlan.from_dict(d) for d in (data if isinstance(data, list) else [data])]
    else:
        plans = plan_from_manifests(cfg.experiments, manifests)
    if args.only:
        plans = [p for p in plans if p.name in set(args.only)]
        if not plans:
            raise ValueError(f"no plan named {args.only}")
    if args.dry_run:
        for p in plans:
            print(p.name)
        return 0
    dirs = train_plans(plans, cfg.unet, cfg.train, args.manifest, args.out, jobs=args.jobs)
    print(f"{len(dirs)} runs -> {args.out}")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    store, _ = build_store(args.manifest)
    rows = evaluate_runs(find_run_dirs(args.runs), store)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    write_json(out / "anova.json", anova_summary(rows))
    print(f"{len(rows)} case rows -> {out / 'metrics.csv'}")
    return 0


def cmd_report(args, cfg: PipelineConfig) -> int:
    rows = []
    for p in args.metrics:
        rows += read_metrics(p)
    files = write_report(normalize_rows(rows), args.out, alpha=cfg.report.alpha)
    for name in files:
        print(Path(args.out) / name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvseg", description="Lateral ventricle segmentation pipeline on phantoms.")
    p.add_argument("--config", help="pipeline JSON config (defaults to the desk profile)")
    p.add_argument("--seed", type=int, help="override every seed of the config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent runs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("config", help="print the effective config")
    s.add_argument("--profile", choices=("desk", "paper"), default="desk")
    s.add_argument("--out")
    s.set_defaults(func=cmd_config)

    s = sub.add_parser("phantom", help="generate phantom cohorts")
    s.add_argument("--out", help="output root; one directory per cohort")
    s.add_argument("--cohort", action="append", help="cohort name (repeatable; default all)")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("preprocess", help="bias correction and intensity standardization")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-map", action="store_true", help="write the per-case landmark maps")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("ipb", help="rule-based silver-standard masks")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threshold", type=float)
    s.add_argument("--erosion-mm", type=float)
    s.add_argument("--distance-mm", type=float)
    s.add_argument("--acpc-z", type=int, help="override the per-case AC-PC slice")
    s.add_argument("--trace-dir", help="write intermediate masks and candidate rankings")
    s.set_defaults(func=cmd_ipb)

    s = sub.add_parser("train", help="plan and run training schedules")
    s.add_argument("--manifest", action="append", required=True, help="cohort manifest (repeatable)")
    s.add_argument("--plan", help="plan JSON (one plan or a list); default: plan from the config")
    s.add_argument("--only", action="append", help="run only the named plan(s)")
    s.add_argument("--out", required=True)
    s.add_argument("--dry-run", action="store_true", help="list plan names and exit")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score runs on their held-out test cases")
    s.add_argument("--runs", action="append", required=True, help="run directory or parent (repeatable)")
    s.add_argument("--manifest", action="append", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="tables and figures from metrics.csv")
    s.add_argument("--metrics", action="append", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ValueError("--jobs must be at least 1")
        cfg = _config(args)
        return args.func(args, cfg)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""File-level pipeline steps shared by the command line and the tests.

Each cohort lives in a directory with a ``manifest.json``::

    {"dataset": "source", "stage": "phantom",
     "cases": {"case000": {"image": "case000.mvol", "brain": "...", "truth": "...",
                           "acpc_z": 7, "site_id": "source-siemens", "vendor": "siemens"}}}

Paths inside a manifest are relative to the manifest's directory.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from .ipb import IpbParams, generate_ss_cohort
from .neural import TrainConfig, UNetConfig
from .phantom import Jitter, PhantomSpec, SiteProfile, generate_cohort
from .preprocess import standardize_volume
from .stats import one_way_anova, tukey_hsd
from .training import (CaseStore, ExperimentConfig, ExperimentPlan, RunRecord, cohort_tags,
                       evaluate_record, plan_experiments, run_schedule)
from .volume import IMAGE_SUFFIX, MASK_SUFFIX, read_volume, write_volume

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
METRIC_COLUMNS = ("run", "model", "target", "ss_count", "dataset", "role", "case_id", "site_id",
                  "dsc", "predicted_ml", "truth_ml")
PATH_KEYS = ("image", "brain", "truth", "ss")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_manifest(path) -> tuple[dict, Path]:
    """Manifest dict and the directory its paths are relative to."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    data = json.loads(path.read_text())
    if "dataset" not in data or "cases" not in data:
        raise ValueError(f"{path}: not a cohort manifest (needs 'dataset' and 'cases')")
    return data, path.parent


def _rebase(entry: dict, old_base: Path, new_base: Path) -> dict:
    out = dict(entry)
    for k in PATH_KEYS:
        if out.get(k):
            target = (old_base / out[k]).resolve()
            out[k] = os.path.relpath(target, new_base.resolve())
    return out


def make_phantom_cohort(name: str, n: int, spec: PhantomSpec, profiles: list[SiteProfile], seed: int,
                        jitter: Optional[Jitter], out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = {}
    for case in generate_cohort(n, spec, profiles, seed, jitter=jitter, dataset=name):
        cid = case.case_id
        files = {"image": f"{cid}{IMAGE_SUFFIX}", "brain": f"{cid}_brain{MASK_SUFFIX}",
                 "truth": f"{cid}_truth{MASK_SUFFIX}"}
        write_volume(case.image, out_dir / files["image"])
        write_volume(case.brain_mask, out_dir / files["brain"])
        write_volume(case.ventricle_mask, out_dir / files["truth"])
        cases[cid] = dict(files, acpc_z=case.acpc_z, site_id=case.site_id, vendor=case.vendor)
    manifest = {"dataset": name, "stage": "phantom", "seed": seed, "cases": cases,
                "profiles": [p.to_dict() for p in profiles]}
    write_json(out_dir / MANIFEST, manifest)
    return manifest


def preprocess_cohort(manifest_path, out_dir, dump_map: bool = False) -> dict:
    """Bias-correct and standardize every image; other files are referenced, not copied."""
    manifest, base = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases, maps = {}, {}
    for cid, entry in sorted(manifest["cases"].items()):
        image = read_volume(base / entry["image"])
        brain = read_volume(base / entry["brain"])
        try:
            std, mapping = standardize_volume(image, brain)
        except ValueError as exc:
            raise ValueError(f"case {manifest['dataset']}/{cid}: {exc}") from None
        name = f"{cid}_std{IMAGE_SUFFIX}"
        write_volume(std, out_dir / name)
        new = _rebase(entry, base, out_dir)
        new["image"] = name
        cases[cid] = new
        maps[cid] = mapping.to_dict()
    out = {k: v for k, v in manifest.items() if k != "cases"}
    out.update(stage="standardized", cases=cases)
    write_json(out_dir / MANIFEST, out)
    if dump_map:
        write_json(out_dir / "standardization_maps.json", maps)
    return out


def ipb_cohort(manifest_path, out_dir, params: IpbParams, trace_dir=None) -> dict:
    """Silver-standard masks for every case; failed cases keep no ``ss`` entry."""
    manifest, base = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    result = generate_ss_cohort(manifest, params, out_dir, base_dir=base, trace_dir=trace_dir)
    cases = {}
    for cid, entry in sorted(manifest["cases"].items()):
        new = _rebase(entry, base, out_dir)
        if cid in result["cases"]:
            new["ss"] = f"{cid}_ss{MASK_SUFFIX}"
        cases[cid] = new
    out = {k: v for k, v in manifest.items() if k != "cases"}
    out.update(stage="ss", cases=cases, ipb_failures=result["failures"], ipb_params=result["params"])
    write_json(out_dir / MANIFEST, out)
    return out


def build_store(manifest_paths) -> tuple[CaseStore, dict]:
    store = CaseStore()
    manifests = {}
    for p in manifest_paths:
        manifest, base = load_manifest(p)
        if manifest["dataset"] in manifests:
            raise ValueError(f"cohort {manifest['dataset']!r} given twice")
        store.add_manifest(manifest, base)
        manifests[manifest["dataset"]] = manifest
    return store, manifests


def plan_from_manifests(cfg: ExperimentConfig, manifests: dict) -> list[ExperimentPlan]:
    cohorts = {name: cohort_tags(m, cfg.stratify_by) for name, m in manifests.items()}
    ss_ok = {name: {cid for cid, e in m["cases"].items() if e.get("ss")} for name, m in manifests.items()}
    for t in cfg.targets:
        if t in manifests and not ss_ok[t]:
            raise ValueError(f"target cohort {t!r} has no SS masks; run the ipb step on it first")
    return plan_experiments(cfg, cohorts, ss_available=ss_ok)


def _run_one(args):
    plan_dict, unet_dict, train_dict, manifest_paths, out_dir = args
    store, _ = build_store(manifest_paths)
    plan = ExperimentPlan.from_dict(plan_dict)
    rec = run_schedule(plan, UNetConfig(**unet_dict), TrainConfig.from_dict(train_dict), store)
    rec.save(Path(out_dir) / plan.name)
    return plan.name


def train_plans(plans, unet_cfg: UNetConfig, train_cfg: TrainConfig, manifest_paths, out_dir,
                jobs: int = 1) -> list[Path]:
    """Run every plan into ``out_dir/<plan name>``; with ``jobs > 1`` plans run in worker processes."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "plans.json", [p.to_dict() for p in plans])
    if jobs > 1:
        args = [(p.to_dict(), unet_cfg.to_dict(), train_cfg.to_dict(), list(map(str, manifest_paths)), str(out_dir))
                for p in plans]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            names = list(pool.map(_run_one, args))
        return [out_dir / n for n in names]
    store, _ = build_store(manifest_paths)
    cache = {}
    dirs = []
    for p in plans:
        rec = run_schedule(p, unet_cfg, train_cfg, store, cache)
        dirs.append(rec.save(out_dir / p.name))
        log.info("finished %s in %.1fs", p.name, rec.wall_seconds)
    return dirs


def find_run_dirs(paths) -> list[Path]:
    """Run directories named directly or found one level below the given paths."""
    out = []
    for p in map(Path, paths):
        if (p / "plan.json").exists():
            out.append(p)
        elif p.is_dir():
            out += sorted(d for d in p.iterdir() if (d / "plan.json").exists())
        else:
            raise FileNotFoundError(f"no run directory at {p}")
    if not out:
        raise FileNotFoundError("no run directories found")
    return out


def evaluate_runs(run_dirs, store: CaseStore) -> list[dict]:
    rows = []
    for d in run_dirs:
        rows += evaluate_record(RunRecord.load(d), store)
    return rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def _anova_block(groups: dict) -> dict:
    names = [k for k, v in groups.items() if len(v) >= 2]
    if len(names) < 2:
        return {"groups": names, "note": "fewer than 2 groups with 2+ cases"}
    vals = [groups[k] for k in names]
    a = one_way_anova(vals)
    t = tukey_hsd(vals, labels=tuple(names))
    return {
        "groups": names, "means": list(a.means), "sizes": list(a.sizes),
        "f_stat": a.f_stat, "df_between": a.df_between, "df_within": a.df_within,
        "p_value": a.p_value, "mse": a.mse,
        "tukey": [{"a": names[pc.i], "b": names[pc.j], "q_stat": pc.q_stat, "p_value": pc.p_value,
                   "significant_at_0.05": pc.significant} for pc in t.pairs],
    }


def anova_summary(rows) -> dict:
    """ANOVA and Tukey on per-case DSC, grouped by run, under two groupings.

    ``pooled_targets`` pools the target-domain test cases of all target
    cohorts; ``per_dataset`` tests each cohort's cases separately.
    """
    pooled, per = {}, {}
    for r in rows:
        if r["role"] == "target":
            pooled.setdefault(r["run"], []).append(r["dsc"])
        per.setdefault(r["dataset"], {}).setdefault(r["run"], []).append(r["dsc"])
    return {"pooled_targets": _anova_block(pooled),
            "per_dataset": {d: _anova_block(g) for d, g in sorted(per.items())}}

"""Experiment planning, pre-train/fine-tune schedules and volume inference.

Case keys are ``"<dataset>/<case_id>"`` strings so that several cohorts can
share one :class:`CaseStore`.  Source cohorts provide gold-standard (GS)
masks for training; target cohorts provide silver-standard (SS) masks for
training and GS masks only for their held-out test cases.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .neural import AugmentConfig, ModelCheckpoint, SliceSet, TrainConfig, UNet, UNetConfig, train_model
from .neural.trainer import predict_probs
from .stats import dsc
from .validation import as_masks, as_scans, check_standardized
from .volume import (STANDARD_MAX, BinaryMask, Scan, Volume, check_congruent, mask_volume_ml,
                     read_volume)

log = logging.getLogger(__name__)

SCHEDULES = ("gs_only", "ss_only", "gs_then_ss", "ss_then_gs")
# mask kind and cohort role ("source"/"target") of each phase
SCHEDULE_PHASES = {
    "gs_only": (("gs", "source"),),
    "ss_only": (("ss", "target"),),
    "gs_then_ss": (("gs", "source"), ("ss", "target")),
    "ss_then_gs": (("ss", "target"), ("gs", "source")),
}
MODEL_LABELS = {"gs_only": "GS only", "ss_only": "SS only",
                "gs_then_ss": "GS+SS", "ss_then_gs": "SS+GS"}


class InsufficientCasesError(ValueError):
    pass


def case_key(dataset: str, case_id: str) -> str:
    return f"{dataset}/{case_id}"


def split_key(key: str) -> tuple[str, str]:
    dataset, _, case_id = key.partition("/")
    return dataset, case_id


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------

class CaseStore:
    """Scans and masks addressed by case key; manifest-backed entries load lazily."""

    def __init__(self):
        self._scans: dict[str, Scan] = {}
        self._ss: dict[str, BinaryMask] = {}
        self._pending: dict[str, tuple[dict, Path]] = {}

    def add(self, dataset: str, scan: Scan, ss: Optional[BinaryMask] = None) -> str:
        key = case_key(dataset, scan.case_id)
        if ss is not None:
            check_congruent(scan.image, ss)
            self._ss[key] = ss
        self._scans[key] = scan
        return key

    def add_manifest(self, manifest: dict, base_dir=None) -> None:
        """Register every case of a cohort manifest (see :func:`cohort_tags`)."""
        dataset = manifest["dataset"]
        base = Path(base_dir) if base_dir is not None else Path(".")
        for case_id, entry in sorted(manifest["cases"].items()):
            self._pending[case_key(dataset, case_id)] = (dict(entry, case_id=case_id), base)

    def _load(self, key: str) -> None:
        entry, base = self._pending.pop(key)
        image = read_volume(base / entry["image"])
        brain = read_volume(base / entry["brain"])
        truth = read_volume(base / entry["truth"]) if entry.get("truth") else None
        scan = Scan(image, brain, case_id=entry["case_id"], site_id=entry.get("site_id", image.site_id),
                    acpc_z=entry.get("acpc_z"), truth=truth,
                    tags={k: v for k, v in entry.items() if isinstance(v, str)})
        self._scans[key] = scan
        if entry.get("ss"):
            self._ss[key] = read_volume(base / entry["ss"])

    def __contains__(self, key) -> bool:
        return key in self._scans or key in self._pending

    def keys(self) -> list[str]:
        return sorted(set(self._scans) | set(self._pending))

    def scan(self, key: str) -> Scan:
        if key in self._pending:
            self._load(key)
        try:
            return self._scans[key]
        except KeyError:
            raise KeyError(f"unknown case {key!r}") from None

    def mask(self, key: str, kind: str) -> BinaryMask:
        scan = self.scan(key)
        if kind == "gs":
            m = scan.truth
        elif kind == "ss":
            m = self._ss.get(key)
        else:
            raise ValueError(f"unknown mask kind {kind!r}")
        if m is None:
            raise KeyError(f"case {key!r} has no {kind.upper()} mask")
        return m

    def has_mask(self, key: str, kind: str) -> bool:
        if key in self._pending:
            entry = self._pending[key][0]
            return bool(entry.get("truth" if kind == "gs" else "ss"))
        scan = self._scans[key]
        return (scan.truth if kind == "gs" else self._ss.get(key)) is not None


def cohort_tags(manifest: dict, stratify_by: str = "site_id") -> dict[str, str]:
    """Case id -> stratification tag of a cohort manifest."""
    return {cid: str(entry.get(stratify_by, "")) for cid, entry in manifest["cases"].items()}


# ---------------------------------------------------------------------------
# slices
# ---------------------------------------------------------------------------

def _axis_window(n: int, m: int) -> tuple[slice, slice]:
    """Source and destination index ranges for centring ``n`` samples in ``m``."""
    if n >= m:
        start = (n - m) // 2
        return slice(start, start + m), slice(0, m)
    start = (m - n) // 2
    return slice(0, n), slice(start, start + n)


def fit_to_hw(stack: np.ndarray, hw) -> np.ndarray:
    """Centre-crop or zero-pad the last two axes of ``stack`` to ``hw``."""
    (sa, da), (sb, db) = _axis_window(stack.shape[-2], hw[0]), _axis_window(stack.shape[-1], hw[1])
    out = np.zeros(stack.shape[:-2] + tuple(hw), dtype=stack.dtype)
    out[..., da, db] = stack[..., sa, sb]
    return out


def restore_from_hw(stack: np.ndarray, orig_hw) -> np.ndarray:
    """Inverse placement of :func:`fit_to_hw`; cropped-away pixels become zero."""
    (sa, da), (sb, db) = _axis_window(orig_hw[0], stack.shape[-2]), _axis_window(orig_hw[1], stack.shape[-1])
    out = np.zeros(stack.shape[:-2] + tuple(orig_hw), dtype=stack.dtype)
    out[..., sa, sb] = stack[..., da, db]
    return out


def volume_slices(v: Volume, hw) -> np.ndarray:
    """Axial slices ``(nz, H, W)`` scaled to [0, 1]."""
    return fit_to_hw(np.moveaxis(v.voxels.astype(np.float64), 2, 0) / STANDARD_MAX, hw)


def mask_slices(m: BinaryMask, hw) -> np.ndarray:
    return fit_to_hw(np.moveaxis(m.bits, 2, 0), hw)


def build_slice_set(store: CaseStore, keys, kind: str, hw) -> SliceSet:
    """Every axial slice of every listed case, empty-mask slices included."""
    images, masks = [], []
    for key in keys:
        scan = store.scan(key)
        check_standardized([scan])
        images.append(volume_slices(scan.image, hw))
        masks.append(mask_slices(store.mask(key, kind), hw))
    if not images:
        h, w = hw
        return SliceSet(np.zeros((0, h, w)), np.zeros((0, h, w), dtype=bool))
    return SliceSet(np.concatenate(images), np.concatenate(masks))


def predict_volume(model, v: Volume, brain: BinaryMask, batch_size: int = 16) -> BinaryMask:
    """Slice-wise eval-mode inference, argmax, restricted to the brain mask."""
    if isinstance(model, ModelCheckpoint):
        model = model.to_model()
    check_congruent(v, brain)
    if v.intensity_state != "standardized":
        raise ValueError(f"expected a standardized volume, got {v.intensity_state!r}")
    hw = model.config.input_hw
    probs = predict_probs(model, volume_slices(v, hw), batch_size)
    labels = probs.argmax(axis=1) == 1
    bits = np.moveaxis(restore_from_hw(labels, v.dims[:2]), 0, 2) & brain.bits
    return BinaryMask(bits, brain.spacing, v.site_id, v.acpc_z)


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Factorial design of schedules, SS-mask counts and target cohorts."""

    source: str = "source"
    targets: tuple = ("target1", "target2", "target3")
    ss_counts: tuple = (5, 10, 15, 20)
    schedules: tuple = SCHEDULES
    test_per_dataset: int = 6
    gs_train_count: Optional[int] = None
    val_fraction: float = 0.2
    stratify_by: str = "site_id"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "ss_counts", tuple(int(n) for n in self.ss_counts))
        object.__setattr__(self, "schedules", tuple(self.schedules))
        unknown = set(self.schedules) - set(SCHEDULES)
        if unknown:
            raise ValueError(f"unknown schedules {sorted(unknown)}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.test_per_dataset < 1 or any(n < 1 for n in self.ss_counts):
            raise ValueError("counts must be positive")
        if self.source in self.targets:
            raise ValueError("source cohort cannot also be a target")

    def to_dict(self) -> dict:
        return {"source": self.source, "targets": list(self.targets), "ss_counts": list(self.ss_counts),
                "schedules": list(self.schedules), "test_per_dataset": self.test_per_dataset,
                "gs_train_count": self.gs_train_count, "val_fraction": self.val_fraction,
                "stratify_by": self.stratify_by, "seed": self.seed}


@dataclass(frozen=True)
class PhaseSpec:
    dataset: str
    mask_kind: str
    train: tuple
    val: tuple


@dataclass(frozen=True)
class ExperimentPlan:
    schedule: str
    ss_count: Optional[int]
    source: str
    target: Optional[str]
    phases: tuple
    held_out_test: tuple
    stratify_by: str = "site_id"
    seed: int = 0

    def __post_init__(self):
        expected = SCHEDULE_PHASES[self.schedule]
        if tuple(p.mask_kind for p in self.phases) != tuple(k for k, _ in expected):
            raise ValueError(f"phases inconsistent with schedule {self.schedule!r}")
        test = set(self.held_out_test)
        for p in self.phases:
            if test & (set(p.train) | set(p.val)):
                raise ValueError("held-out test cases leak into training data")

    @property
    def name(self) -> str:
        if self.target is None:
            return self.schedule
        return f"{self.schedule}__{self.target}__ss{self.ss_count}"

    @property
    def model_label(self) -> str:
        return MODEL_LABELS[self.schedule]

    @property
    def split(self) -> dict:
        train, val = [], []
        for p in self.phases:
            train += [k for k in p.train if k not in train]
            val += [k for k in p.val if k not in val]
        return {"train": train, "val": val, "held_out_test": list(self.held_out_test)}

    def to_dict(self) -> dict:
        return {"schedule": self.schedule, "ss_count": self.ss_count, "source": self.source,
                "target": self.target, "stratify_by": self.stratify_by, "seed": self.seed,
                "held_out_test": list(self.held_out_test),
                "phases": [{"dataset": p.dataset, "mask_kind": p.mask_kind,
                            "train": list(p.train), "val": list(p.val)} for p in self.phases]}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        phases = tuple(PhaseSpec(p["dataset"], p["mask_kind"], tuple(p["train"]), tuple(p["val"]))
                       for p in d["phases"])
        return cls(d["schedule"], d["ss_count"], d["source"], d["target"], phases,
                   tuple(d["held_out_test"]), d.get("stratify_by", "site_id"), d.get("seed", 0))


def stratified_order(tags: dict[str, str], rng: np.random.Generator) -> list[str]:
    """Shuffle within each tag group, then deal groups round-robin.

    Any prefix of the result is balanced across tags to within one case.
    """
    groups = {}
    for cid in sorted(tags):
        groups.setdefault(tags[cid], []).append(cid)
    lanes = []
    for tag in sorted(groups):
        members = groups[tag]
        lanes.append([members[i] for i in rng.permutation(len(members))])
    out = []
    for i in range(max((len(l) for l in lanes), default=0)):
        out += [l[i] for l in lanes if i < len(l)]
    return out


def _train_val(ordered: list[str], fraction: float) -> tuple[tuple, tuple]:
    n_val = int(round(fraction * len(ordered))) if fraction > 0 else 0
    if fraction > 0 and len(ordered) >= 2:
        n_val = max(1, n_val)
    n_val = min(n_val, len(ordered) - 1)
    # the tail of a round-robin order is itself spread over the tags
    return tuple(ordered[:len(ordered) - n_val]), tuple(ordered[len(ordered) - n_val:])


@dataclass(frozen=True)
class DatasetSplit:
    held_out: tuple
    pool: tuple  # stratified order of the remaining cases


def split_cohorts(cohorts: dict[str, dict[str, str]], cfg: ExperimentConfig) -> dict[str, DatasetSplit]:
    """Held-out test set and ordered training pool per cohort (keys are case keys)."""
    out = {}
    for i, dataset in enumerate(sorted(cohorts)):
        tags = cohorts[dataset]
        if len(tags) <= cfg.test_per_dataset:
            raise InsufficientCasesError(
                f"cohort {dataset!r} has {len(tags)} cases; {cfg.test_per_dataset} held out "
                f"leaves none for training")
        rng = np.random.default_rng([cfg.seed, i])
        order = [case_key(dataset, c) for c in stratified_order(tags, rng)]
        held = tuple(sorted(order[:cfg.test_per_dataset]))
        out[dataset] = DatasetSplit(held, tuple(order[cfg.test_per_dataset:]))
    return out


def plan_experiments(cfg: ExperimentConfig, cohorts: dict[str, dict[str, str]],
                     ss_available: Optional[dict] = None) -> list[ExperimentPlan]:
    """Full factorial of SS-using schedules x SS counts x targets, plus the GS-only baseline.

    ``cohorts`` maps each cohort name to its case id -> stratification tag
    table (see :func:`cohort_tags`).  Every plan is tested on the held-out
    cases of all cohorts, so every model fills a full row of the results table.
    ``ss_available`` optionally maps a target cohort to the case ids that
    have an SS mask; other cases are left out of its training pool.
    """
    missing = [d for d in (cfg.source, *cfg.targets) if d not in cohorts]
    if missing:
        raise ValueError(f"no manifest for cohorts {missing}")
    splits = split_cohorts({d: cohorts[d] for d in (cfg.source, *cfg.targets)}, cfg)
    held_out = tuple(k for d in sorted(splits) for k in splits[d].held_out)

    src_pool = list(splits[cfg.source].pool)
    n_gs = len(src_pool) if cfg.gs_train_count is None else cfg.gs_train_count
    if n_gs > len(src_pool) or n_gs < 1:
        raise InsufficientCasesError(f"requested {n_gs} GS training cases, {len(src_pool)} available")
    gs_phase = PhaseSpec(cfg.source, "gs", *_train_val(src_pool[:n_gs], cfg.val_fraction))

    def ss_phase(target, n):
        pool = list(splits[target].pool)
        if ss_available is not None and target in ss_available:
            pool = [k for k in pool if split_key(k)[1] in ss_available[target]]
        if n > len(pool):
            raise InsufficientCasesError(
                f"requested {n} SS masks from {target!r}, only {len(pool)} available")
        return PhaseSpec(target, "ss", *_train_val(pool[:n], cfg.val_fraction))

    plans = []
    if "gs_only" in cfg.schedules:
        plans.append(ExperimentPlan("gs_only", None, cfg.source, None, (gs_phase,), held_out,
                                    cfg.stratify_by, cfg.seed))
    for schedule in cfg.schedules:
        if schedule == "gs_only":
            continue
        for target in cfg.targets:
            for n in cfg.ss_counts:
                ss = ss_phase(target, n)
                phases = {"ss_only": (ss,), "gs_then_ss": (gs_phase, ss), "ss_then_gs": (ss, gs_phase)}[schedule]
                plans.append(ExperimentPlan(schedule, n, cfg.source, target, phases, held_out,
                                            cfg.stratify_by, cfg.seed))
    return plans


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PhaseRecord:
    dataset: str
    mask_kind: str
    checkpoint: ModelCheckpoint
    summary: dict


@dataclass(eq=False)
class RunRecord:
    plan: ExperimentPlan
    unet_config: UNetConfig
    train_config: TrainConfig
    phases: list = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def final_checkpoint(self) -> ModelCheckpoint:
        return self.phases[-1].checkpoint

    def loss_rows(self) -> list[tuple]:
        rows = []
        for i, ph in enumerate(self.phases):
            h = ph.checkpoint.history
            for e, tl in enumerate(h["train_loss"]):
                vl = h["val_loss"][e] if e < len(h["val_loss"]) else ""
                rows.append((i + 1, f"{ph.mask_kind}:{ph.dataset}", e + 1, tl, vl))
        return rows

    def save(self, run_dir) -> Path:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "plan.json").write_text(json.dumps(self.plan.to_dict(), indent=2, sort_keys=True))
        (run_dir / "config.json").write_text(json.dumps(
            {"unet": self.unet_config.to_dict(), "train": self.train_config.to_dict()}, indent=2, sort_keys=True))
        names = ("pretrain", "finetune")
        phases = []
        for i, ph in enumerate(self.phases):
            fname = f"{names[i]}.ckpt"
            ph.checkpoint.save(run_dir / fname)
            summary = {k: v for k, v in ph.summary.items() if k != "wall_seconds"}
            phases.append({"checkpoint": fname, "dataset": ph.dataset, "mask_kind": ph.mask_kind,
                           "summary": summary})
        (run_dir / "record.json").write_text(json.dumps({"phases": phases}, indent=2, sort_keys=True))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("phase", "data", "epoch", "train_loss", "val_loss"))
        w.writerows(self.loss_rows())
        (run_dir / "loss.csv").write_text(buf.getvalue())
        return run_dir

    @classmethod
    def load(cls, run_dir) -> "RunRecord":
        run_dir = Path(run_dir)
        plan = ExperimentPlan.from_dict(json.loads((run_dir / "plan.json").read_text()))
        cfgs = json.loads((run_dir / "config.json").read_text())
        rec = json.loads((run_dir / "record.json").read_text())
        phases = [PhaseRecord(p["dataset"], p["mask_kind"], ModelCheckpoint.load(run_dir / p["checkpoint"]),
                              p["summary"]) for p in rec["phases"]]
        return cls(plan, UNetConfig(**cfgs["unet"]), TrainConfig.from_dict(cfgs["train"]), phases)


def phase_seed(train_seed: int, plan_seed: int, phase_index: int) -> int:
    return int(np.random.SeedSequence([train_seed, plan_seed, phase_index]).generate_state(1)[0])


def _phase_cache_key(plan: ExperimentPlan, upto: int, unet_cfg: UNetConfig, train_cfg: TrainConfig) -> str:
    return json.dumps({"plan_seed": plan.seed, "unet": unet_cfg.to_dict(), "train": train_cfg.to_dict(),
                       "phases": plan.to_dict()["phases"][:upto + 1]}, sort_keys=True)


def run_schedule(plan: ExperimentPlan, unet_cfg: UNetConfig, train_cfg: TrainConfig,
                 store: CaseStore, cache: Optional[dict] = None) -> RunRecord:
    """Train the phases of ``plan`` in order; every phase updates all parameters.

    Phase 1 starts from a seeded He initialization.  Phase 2 starts from the
    phase-1 checkpoint after a serialization round trip.  ``cache`` (a plain
    dict) lets plans that share a leading phase, such as ``gs_only`` and
    ``gs_then_ss``, reuse its result; results are identical either way.
    """
    t0 = time.perf_counter()
    record = RunRecord(plan, unet_cfg, train_cfg)
    init_rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, plan.seed]))
    model = UNet(unet_cfg, init_rng)
    for i, phase in enumerate(plan.phases):
        key = _phase_cache_key(plan, i, unet_cfg, train_cfg)
        if cache is not None and key in cache:
            ckpt, summary = cache[key]
            log.info("%s phase %d: reusing cached %s:%s", plan.name, i + 1, phase.mask_kind, phase.dataset)
        else:
            if i > 0:
                prev = record.phases[-1].checkpoint
                if prev.config != unet_cfg:
                    raise ValueError("checkpoint/config mismatch between phases")
                model = ModelCheckpoint.from_bytes(prev.to_bytes()).to_model()
            train = build_slice_set(store, phase.train, phase.mask_kind, unet_cfg.input_hw)
            val = build_slice_set(store, phase.val, phase.mask_kind, unet_cfg.input_hw)
            if len(train) == 0:
                raise InsufficientCasesError(f"{plan.name} phase {i + 1}: no training cases")
            cfg = replace(train_cfg, seed=phase_seed(train_cfg.seed, plan.seed, i))
            log.info("%s phase %d: %s:%s, %d train / %d val slices", plan.name, i + 1, phase.mask_kind,
                     phase.dataset, len(train), len(val))
            ckpt, summary = train_model(model, train, val, cfg, history={"train_loss": [], "val_loss": []})
            # no plan name here: a cached leading phase is shared by several plans
            ckpt.meta = {"phase": i + 1, "dataset": phase.dataset,
                         "mask_kind": phase.mask_kind, "stop_epoch": summary["stop_epoch"]}
            if cache is not None:
                cache[key] = (ckpt, summary)
        record.phases.append(PhaseRecord(phase.dataset, phase.mask_kind, ckpt, summary))
    record.wall_seconds = time.perf_counter() - t0
    return record


def evaluate_record(record: RunRecord, store: CaseStore) -> list[dict]:
    """One metrics row per held-out test case of the plan."""
    model = record.final_checkpoint.to_model()
    plan = record.plan
    rows = []
    for key in plan.held_out_test:
        dataset, case_id = split_key(key)
        scan = store.scan(key)
        truth = store.mask(key, "gs")
        pred = predict_volume(model, scan.image, scan.brain)
        rows.append({
            "run": plan.name, "model": plan.schedule, "target": plan.target or "",
            "ss_count": plan.ss_count if plan.ss_count is not None else "",
            "dataset": dataset, "role": "source" if dataset == plan.source else "target",
            "case_id": case_id, "site_id": scan.site_id,
            "dsc": dsc(pred, truth), "predicted_ml": mask_volume_ml(pred), "truth_ml": mask_volume_ml(truth),
        })
    return rows


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------

class UNetSegmenter(BaseEstimator):
    """2D U-Net trained on all axial slices of standardized volumes.

    ``fit(X, y)`` takes scans and their masks (the scans' ``truth`` masks
    when ``y`` is None) and holds out ``val_fraction`` of the volumes for
    early stopping.  With ``warm_start=True`` a second ``fit`` continues
    from the current weights, which is how fine-tuning is expressed.
    """

    def __init__(self, levels=3, base_filters=8, input_hw=(64, 64), lr=1e-4, batch_size=16,
                 max_epochs=50, early_stop_patience=15, augment=True, val_fraction=0.2,
                 checkpoint_policy="final_epoch", random_state=0, warm_start=False):
        self.levels = levels
        self.base_filters = base_filters
        self.input_hw = input_hw
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.early_stop_patience = early_stop_patience
        self.augment = augment
        self.val_fraction = val_fraction
        self.checkpoint_policy = checkpoint_policy
        self.random_state = random_state
        self.warm_start = warm_start

    def _configs(self):
        unet = UNetConfig(self.levels, self.base_filters, tuple(self.input_hw))
        train = TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                            early_stop_patience=self.early_stop_patience,
                            augment=AugmentConfig() if self.augment else None,
                            seed=int(self.random_state), checkpoint_policy=self.checkpoint_policy)
        return unet, train

    def fit(self, X, y=None):
        scans = as_scans(X)
        check_standardized(scans)
        if y is None:
            if any(s.truth is None for s in scans):
                raise ValueError("y is None and some scans carry no truth mask")
            y = [s.truth for s in scans]
        masks = as_masks(y, len(scans))
        unet_cfg, train_cfg = self._configs()
        store = CaseStore()
        keys = []
        for i, (s, m) in enumerate(zip(scans, masks)):
            check_congruent(s.image, m)
            keys.append(store.add("fit", replace_truth(s, m, f"{i:05d}")))
        tags = {split_key(k)[1]: s.site_id for k, s in zip(keys, scans)}
        order = [case_key("fit", c) for c in stratified_order(tags, np.random.default_rng(train_cfg.seed))]
        train_keys, val_keys = _train_val(order, self.val_fraction)
        if self.warm_start and hasattr(self, "model_"):
            if self.model_.config != unet_cfg:
                raise ValueError("warm_start with a different network configuration")
            model = self.model_
            n_fit = self.n_fits_
        else:
            model = UNet(unet_cfg, np.random.default_rng(np.random.SeedSequence([train_cfg.seed])))
            n_fit = 0
        cfg = replace(train_cfg, seed=phase_seed(train_cfg.seed, 0, n_fit))
        train = build_slice_set(store, train_keys, "gs", unet_cfg.input_hw)
        val = build_slice_set(store, val_keys, "gs", unet_cfg.input_hw)
        self.checkpoint_, self.train_summary_ = train_model(model, train, val, cfg)
        self.model_ = model
        self.n_fits_ = n_fit + 1
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("UNetSegmenter is not fitted")

    def predict(self, X) -> list[BinaryMask]:
        self._check_fitted()
        scans = as_scans(X)
        check_standardized(scans)
        return [predict_volume(self.model_, s.image, s.brain, self.batch_size) for s in scans]

    def score(self, X, y=None) -> float:
        """Mean Dice over the scans."""
        scans = as_scans(X)
        y = [s.truth for s in scans] if y is None else as_masks(y, len(scans))
        return float(np.mean([dsc(p, t) for p, t in zip(self.predict(scans), y)]))


def replace_truth(scan: Scan, mask: BinaryMask, case_id: str) -> Scan:
    return scan.replace(truth=mask, case_id=case_id)

"""Rule-based lateral ventricle segmentation used to produce silver-standard masks.

Pipeline on a standardized FLAIR volume:

1. dark voxels inside the brain (below ``csf_threshold``) form the total CSF;
2. the brain mask is eroded slice by slice with a disk, and the CSF is
   restricted to that core, which strips the subarachnoid space;
3. connected components of the remaining CSF are ranked by size;
4. the largest one whose in-plane centroid lies within ``center_distance_mm``
   of the brain centroid is kept;
5. its holes are filled;
6. slices below the AC-PC line are cleared.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from . import morphology
from .validation import as_scans, check_state
from .volume import (MASK_SUFFIX, STANDARD_MAX, BinaryMask, Scan, Volume, check_congruent,
                     read_volume, write_volume)

log = logging.getLogger(__name__)


class NoCentralObjectError(RuntimeError):
    """No CSF component passed the centre-distance test."""


@dataclass(frozen=True)
class IpbParams:
    csf_threshold: float = 200.0
    erosion_diameter_mm: float = 25.0
    center_distance_mm: float = 25.0
    connectivity: str = "twenty_six"
    acpc_z: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.csf_threshold < STANDARD_MAX:
            raise ValueError("csf_threshold must lie in (0, 1023)")
        if self.erosion_diameter_mm <= 0 or self.center_distance_mm <= 0:
            raise ValueError("erosion diameter and centre distance must be positive")
        if self.connectivity not in morphology.CONNECTIVITY:
            raise ValueError(f"unknown connectivity {self.connectivity!r}")


@dataclass(eq=False)
class IpbTrace:
    csf_total: Optional[BinaryMask] = None
    eroded_region: Optional[BinaryMask] = None
    candidates: Optional[morphology.LabeledComponents] = None
    ranked_labels: list = field(default_factory=list)
    distances_mm: dict = field(default_factory=dict)
    chosen_label: Optional[int] = None
    brain_centroid_mm: Optional[tuple] = None

    def summary(self) -> dict:
        return {
            "ranked_labels": list(self.ranked_labels),
            "sizes": {str(k): self.candidates.sizes[k] for k in self.ranked_labels} if self.candidates else {},
            "distances_mm": {str(k): v for k, v in self.distances_mm.items()},
            "chosen_label": self.chosen_label,
            "brain_centroid_mm": self.brain_centroid_mm,
        }


def segment_ventricles(v: Volume, brain: BinaryMask, p: IpbParams = IpbParams(),
                       trace: Optional[IpbTrace] = None) -> tuple[BinaryMask, IpbTrace]:
    """Run the six-step pipeline; raises :class:`NoCentralObjectError` on failure.

    Pass ``trace`` to inspect intermediate masks even when the call raises.
    """
    check_congruent(v, brain)
    check_state(v, "standardized")
    acpc_z = p.acpc_z if p.acpc_z is not None else v.acpc_z
    if acpc_z is not None and not 0 <= acpc_z < v.dims[2]:
        raise ValueError(f"acpc_z {acpc_z} outside [0, {v.dims[2]})")
    trace = trace if trace is not None else IpbTrace()

    csf = brain.with_bits(brain.bits & (v.voxels < p.csf_threshold))
    trace.csf_total = csf
    disk = morphology.make_disk(p.erosion_diameter_mm / 2.0, brain.spacing)
    core = morphology.erode_slicewise(brain, disk)
    trace.eroded_region = core

    comps = morphology.connected_components(csf.with_bits(csf.bits & core.bits), p.connectivity)
    trace.candidates = comps
    trace.ranked_labels = comps.ranked()
    if brain.count() == 0:
        raise NoCentralObjectError("no central CSF object: empty brain mask")
    bx, by, bz = morphology.centroid_mm(brain)
    trace.brain_centroid_mm = (bx, by, bz)

    for label in trace.ranked_labels:
        cx, cy, _ = comps.centroids_mm[label]
        dist = math.hypot(cx - bx, cy - by)
        trace.distances_mm[label] = dist
        if dist <= p.center_distance_mm:
            trace.chosen_label = label
            break
    if trace.chosen_label is None:
        raise NoCentralObjectError(
            f"no central CSF object among {comps.count} candidates")

    filled = morphology.fill_holes(brain.with_bits(comps.mask_of(trace.chosen_label))).bits.copy()
    if acpc_z:
        filled[:, :, :acpc_z] = False
    return BinaryMask(filled, brain.spacing, v.site_id, acpc_z), trace


# ---------------------------------------------------------------------------
# cohort generation
# ---------------------------------------------------------------------------

def _dump_trace(trace: IpbTrace, trace_dir: Path, case_id: str) -> None:
    trace_dir.mkdir(parents=True, exist_ok=True)
    if trace.csf_total is not None:
        write_volume(trace.csf_total, trace_dir / f"{case_id}_csf_total{MASK_SUFFIX}")
    if trace.eroded_region is not None:
        write_volume(trace.eroded_region, trace_dir / f"{case_id}_eroded{MASK_SUFFIX}")
    if trace.candidates is not None and trace.csf_total is not None:
        cand = trace.csf_total.with_bits(trace.candidates.labels > 0)
        write_volume(cand, trace_dir / f"{case_id}_candidates{MASK_SUFFIX}")
    (trace_dir / f"{case_id}_trace.json").write_text(json.dumps(trace.summary(), indent=2))


def generate_ss_cohort(manifest: dict, p: IpbParams, out_dir, base_dir=None,
                       trace_dir=None) -> dict:
    """Write one SS mask per manifest case into ``out_dir``.

    ``manifest["cases"]`` maps case ids to entries holding at least ``image``
    and ``brain`` file names (relative to ``base_dir``) and optionally
    ``acpc_z``.  Failures are recorded, not raised.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(base_dir) if base_dir is not None else Path(".")
    result = {"cases": {}, "failures": {}, "params": _params_dict(p)}
    for case_id, entry in sorted(manifest.get("cases", {}).items()):
        image = read_volume(base / entry["image"])
        brain = read_volume(base / entry["brain"])
        acpc = entry.get("acpc_z", p.acpc_z)
        params = IpbParams(p.csf_threshold, p.erosion_diameter_mm, p.center_distance_mm,
                           p.connectivity, acpc)
        trace = IpbTrace()
        try:
            mask, trace = segment_ventricles(image, brain, params, trace)
        except NoCentralObjectError as exc:
            log.warning("case %s: %s", case_id, exc)
            result["failures"][case_id] = str(exc)
            if trace_dir is not None:
                _dump_trace(trace, Path(trace_dir), case_id)
            continue
        name = f"{case_id}_ss{MASK_SUFFIX}"
        write_volume(mask, out_dir / name)
        if trace_dir is not None:
            _dump_trace(trace, Path(trace_dir), case_id)
        result["cases"][case_id] = dict(entry, ss=str((out_dir / name).resolve()))
    (out_dir / "ss_manifest.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def _params_dict(p: IpbParams) -> dict:
    return {"csf_threshold": p.csf_threshold, "erosion_diameter_mm": p.erosion_diameter_mm,
            "center_distance_mm": p.center_distance_mm, "connectivity": p.connectivity,
            "acpc_z": p.acpc_z}


class IPBSegmenter(BaseEstimator):
    """Estimator wrapper around :func:`segment_ventricles`.

    There is nothing to learn; ``fit`` validates input.  ``predict`` returns
    one mask per scan, or ``None`` for scans where no central object exists
    (when ``on_failure="skip"``).
    """

    def __init__(self, csf_threshold=200.0, erosion_diameter_mm=25.0,
                 center_distance_mm=25.0, connectivity="twenty_six", on_failure="raise"):
        self.csf_threshold = csf_threshold
        self.erosion_diameter_mm = erosion_diameter_mm
        self.center_distance_mm = center_distance_mm
        self.connectivity = connectivity
        self.on_failure = on_failure

    def _params(self, acpc_z=None) -> IpbParams:
        return IpbParams(self.csf_threshold, self.erosion_diameter_mm,
                         self.center_distance_mm, self.connectivity, acpc_z)

    def fit(self, X, y=None):
        self._params()
        as_scans(X)
        self.fitted_ = True
        return self

    def predict(self, X) -> list:
        if self.on_failure not in ("raise", "skip"):
            raise ValueError("on_failure must be 'raise' or 'skip'")
        out = []
        self.traces_ = []
        self.failures_ = {}
        for scan in as_scans(X):
            try:
                mask, trace = segment_ventricles(scan.image, scan.brain, self._params(scan.acpc_z))
            except NoCentralObjectError as exc:
                if self.on_failure == "raise":
                    raise
                self.failures_[scan.case_id] = str(exc)
                mask, trace = None, None
            out.append(mask)
            self.traces_.append(trace)
        return out

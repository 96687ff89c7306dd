"""Pipeline configuration: one JSON document, every field defaulted.

Unknown keys are rejected at every nesting level so that typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .ipb import IpbParams
from .neural import AugmentConfig, TrainConfig, UNetConfig
from .phantom import Jitter, PhantomSpec, SiteProfile, default_profiles, target_spec
from .training import ExperimentConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CohortConfig:
    name: str
    n: int = 26
    domain: str = "source"      # selects the default site profiles
    anatomy: str = "source"     # "target" enlarges the ventricles
    seed: Optional[int] = None  # derived from the pipeline seed when omitted
    profiles: Optional[tuple] = None  # explicit SiteProfile dicts override ``domain``

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"cohort {self.name!r}: n must be positive")
        if self.domain not in ("source", "target") and self.profiles is None:
            raise ConfigError(f"cohort {self.name!r}: domain must be 'source' or 'target'")
        if self.anatomy not in ("source", "target"):
            raise ConfigError(f"cohort {self.name!r}: anatomy must be 'source' or 'target'")
        if "/" in self.name or not self.name:
            raise ConfigError("cohort names must be non-empty and free of '/'")

    def site_profiles(self) -> list[SiteProfile]:
        if self.profiles is not None:
            return [SiteProfile.from_dict(p) for p in self.profiles]
        return default_profiles(self.domain)

    def phantom_spec(self, template: PhantomSpec) -> PhantomSpec:
        return target_spec(template) if self.anatomy == "target" else template


def _default_cohorts():
    return (CohortConfig("source", domain="source", anatomy="source"),
            CohortConfig("target1", domain="target", anatomy="target"),
            CohortConfig("target2", domain="target", anatomy="source"),
            CohortConfig("target3", domain="target", anatomy="target"))


@dataclass(frozen=True)
class PhantomConfig:
    spec: PhantomSpec = field(default_factory=PhantomSpec)
    jitter: Jitter = field(default_factory=Jitter)
    cohorts: tuple = field(default_factory=_default_cohorts)

    def cohort(self, name: str) -> CohortConfig:
        for c in self.cohorts:
            if c.name == name:
                return c
        raise ConfigError(f"no cohort named {name!r}")


@dataclass(frozen=True)
class IpbConfig:
    csf_threshold: float = 200.0
    erosion_diameter_mm: float = 25.0
    center_distance_mm: float = 25.0
    connectivity: str = "twenty_six"

    def params(self, acpc_z=None) -> IpbParams:
        return IpbParams(self.csf_threshold, self.erosion_diameter_mm, self.center_distance_mm,
                         self.connectivity, acpc_z)


@dataclass(frozen=True)
class PathsConfig:
    work_dir: str = "work"


@dataclass(frozen=True)
class ReportConfig:
    alpha: float = 0.05


def _desk_unet():
    return UNetConfig(levels=3, base_filters=8, input_hw=(64, 64))


def _desk_train():
    return TrainConfig(lr=1e-3, max_epochs=30, early_stop_patience=10)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    ipb: IpbConfig = field(default_factory=IpbConfig)
    unet: UNetConfig = field(default_factory=_desk_unet)
    train: TrainConfig = field(default_factory=_desk_train)
    experiments: ExperimentConfig = field(default_factory=ExperimentConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        names = [c.name for c in self.phantom.cohorts]
        if len(set(names)) != len(names):
            raise ConfigError("cohort names must be unique")
        for needed in (self.experiments.source, *self.experiments.targets):
            if needed not in names:
                raise ConfigError(f"experiments refer to unknown cohort {needed!r}")

    @classmethod
    def desk_profile(cls) -> "PipelineConfig":
        return cls()

    @classmethod
    def paper_profile(cls) -> "PipelineConfig":
        """Full-size network and the published optimizer settings."""
        return cls(unet=UNetConfig.paper_profile(), train=TrainConfig(),
                   experiments=ExperimentConfig(ss_counts=(50, 100, 150, 200), test_per_dataset=30))

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, train=replace(self.train, seed=seed),
                       experiments=replace(self.experiments, seed=seed))

    def cohort_seed(self, name: str) -> int:
        c = self.phantom.cohort(name)
        if c.seed is not None:
            return c.seed
        idx = [x.name for x in self.phantom.cohorts].index(name)
        return int(np.random.SeedSequence([self.seed, idx]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return _build(cls, d, "config")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)


# ---------------------------------------------------------------------------
# strict (de)serialization of the nested dataclasses
# ---------------------------------------------------------------------------

def _to_jsonable(obj):
    if isinstance(obj, (UNetConfig, TrainConfig, ExperimentConfig, AugmentConfig, SiteProfile, PhantomSpec)):
        return _to_jsonable(obj.to_dict())
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


_NESTED = {
    (PipelineConfig, "paths"): PathsConfig,
    (PipelineConfig, "phantom"): PhantomConfig,
    (PipelineConfig, "ipb"): IpbConfig,
    (PipelineConfig, "unet"): UNetConfig,
    (PipelineConfig, "train"): TrainConfig,
    (PipelineConfig, "experiments"): ExperimentConfig,
    (PipelineConfig, "report"): ReportConfig,
    (PhantomConfig, "jitter"): Jitter,
    (TrainConfig, "augment"): AugmentConfig,
}


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kw = {}
    for key, value in d.items():
        sub = _NESTED.get((cls, key))
        path = f"{where}.{key}"
        if sub is not None and value is not None:
            kw[key] = _build(sub, value, path)
        elif cls is PhantomConfig and key == "spec":
            _check_keys(PhantomSpec, value, path)
            kw[key] = PhantomSpec.from_dict(value)
        elif cls is PhantomConfig and key == "cohorts":
            if not isinstance(value, list):
                raise ConfigError(f"{path}: expected a list")
            kw[key] = tuple(_build(CohortConfig, c, f"{path}[{i}]") for i, c in enumerate(value))
        elif cls is CohortConfig and key == "profiles" and value is not None:
            for i, p in enumerate(value):
                _check_keys(SiteProfile, p, f"{path}[{i}]")
            kw[key] = tuple(value)
        elif isinstance(value, list):
            kw[key] = tuple(value)
        else:
            kw[key] = value
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _check_keys(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(d) - {f.name for f in dataclasses.fields(cls)})
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")

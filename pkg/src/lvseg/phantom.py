"""Synthetic FLAIR-like brain phantoms with exact ventricle ground truth.

A phantom is an ellipsoidal brain with, from the outside in, a thin dark
subarachnoid rim, a grey-matter ribbon and a white-matter core.  Radial
sulci cut dark sheets into the cortex.  Two bent crescent ventricles sit
near the midline and overlap there, so they form one 26-connected object
just like a pair of lateral ventricles seen through thick slices.

Each acquisition site is described by a :class:`SiteProfile` (contrast,
noise, bias field, voxel spacing).  Anatomy comes from :class:`PhantomSpec`.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import ndimage

from .preprocess import MONOMIALS, BiasModel
from .volume import BinaryMask, Scan, Spacing, Volume

VENDORS = ("siemens", "ge", "philips")


class PhantomGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class SiteProfile:
    site_id: str
    tissue_means: dict
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.0
    contrast_gamma: float = 1.0
    spacing: Spacing = Spacing(2.0, 2.0, 5.0)
    vendor: str = ""
    psf_sigma_mm: float = 0.0  # Gaussian point-spread, applied before bias and noise

    def __post_init__(self):
        tm = self.tissue_means
        if not tm["csf"] < tm["gm"] < tm["wm"]:
            raise ValueError("tissue means must satisfy csf < gm < wm")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.bias_amplitude <= 0.5:
            raise ValueError("bias_amplitude must lie in [0, 0.5]")
        if self.contrast_gamma <= 0:
            raise ValueError("contrast_gamma must be positive")
        if self.psf_sigma_mm < 0:
            raise ValueError("psf_sigma_mm must be non-negative")

    def adjusted_means(self) -> dict:
        wm = self.tissue_means["wm"]
        return {k: wm * (v / wm) ** self.contrast_gamma for k, v in self.tissue_means.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spacing"] = list(self.spacing.as_tuple())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SiteProfile":
        d = dict(d)
        if "spacing" in d and not isinstance(d["spacing"], Spacing):
            d["spacing"] = Spacing(*d["spacing"])
        return cls(**d)


@dataclass(frozen=True)
class VentricleParams:
    """One lateral ventricle: an outer ellipsoid with an inner ellipsoid carved out.

    Both ellipsoids are sheared along x by ``bend * outer_x * (y / outer_y)**2``
    (mirrored for the left side), which bends the crescent without changing
    its volume.
    """

    center_mm: tuple = (7.0, 4.0, 8.0)
    outer_radii_mm: tuple = (9.0, 24.0, 14.0)
    inner_radii_mm: tuple = (6.0, 19.0, 10.0)
    inner_offset_mm: tuple = (7.0, 0.0, -3.0)
    bend: float = 0.4

    def mirrored(self) -> "VentricleParams":
        cx, cy, cz = self.center_mm
        ox, oy, oz = self.inner_offset_mm
        return replace(self, center_mm=(-cx, cy, cz), inner_offset_mm=(-ox, oy, oz), bend=-self.bend)

    def local_coords(self, x, y, z):
        cx, cy, cz = self.center_mm
        ax, ay, _ = self.outer_radii_mm
        u, v, w = x - cx, y - cy, z - cz
        u = u - self.bend * ax * np.clip(v / ay, -1.0, 1.0) ** 2
        return u, v, w

    def contains(self, x, y, z) -> np.ndarray:
        u, v, w = self.local_coords(x, y, z)
        ax, ay, az = self.outer_radii_mm
        ix, iy, iz = self.inner_radii_mm
        ox, oy, oz = self.inner_offset_mm
        outer = (u / ax) ** 2 + (v / ay) ** 2 + (w / az) ** 2 <= 1.0
        inner = ((u - ox) / ix) ** 2 + ((v - oy) / iy) ** 2 + ((w - oz) / iz) ** 2 <= 1.0
        return outer & ~inner


def _default_ventricles():
    right = VentricleParams()
    return (right.mirrored(), right)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (96, 96, 24)
    brain_axes_mm: tuple = (68.0, 84.0, 56.0)
    ventricles: tuple = field(default_factory=_default_ventricles)
    subarachnoid_rim_mm: float = 3.0
    gm_thickness_mm: float = 7.0
    sulcus_count: int = 8
    sulcus_depth_mm: float = 20.0
    acpc_z_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.acpc_z_fraction < 1.0:
            raise ValueError("acpc_z_fraction must lie in (0, 1)")
        if self.subarachnoid_rim_mm <= 0 or self.subarachnoid_rim_mm >= min(self.brain_axes_mm):
            raise ValueError("subarachnoid rim must be positive and thinner than the brain")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        d = dict(d)
        if "ventricles" in d:
            d["ventricles"] = tuple(
                v if isinstance(v, VentricleParams)
                else VentricleParams(**{k: tuple(x) if isinstance(x, list) else x
                                        for k, x in v.items()})
                for v in d["ventricles"])
        for key in ("dims", "brain_axes_mm"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PhantomCase:
    image: Volume
    brain_mask: BinaryMask
    ventricle_mask: BinaryMask
    acpc_z: int
    site_id: str
    case_id: str = ""
    vendor: str = ""
    dataset: str = ""

    def to_scan(self) -> Scan:
        return Scan(self.image, self.brain_mask, case_id=self.case_id, site_id=self.site_id,
                    acpc_z=self.acpc_z, truth=self.ventricle_mask,
                    tags={"vendor": self.vendor, "dataset": self.dataset})


def grid_coords_mm(dims, spacing: Spacing):
    """Voxel-centre coordinates in mm, origin at the grid centre."""
    axes = [(np.arange(n) + 0.5) * s - n * s / 2.0 for n, s in zip(dims, spacing.as_tuple())]
    return np.meshgrid(*axes, indexing="ij")


def bias_model_for(amplitude: float, rng: np.random.Generator) -> BiasModel:
    """Random degree-2 log field whose values stay within ``[-amplitude, amplitude]``."""
    coef = rng.normal(size=len(MONOMIALS))
    coef[0] = 0.0
    # sum of |coef| bounds the polynomial on [-1, 1]^3
    coef *= amplitude / max(np.abs(coef).sum(), 1e-12)
    return BiasModel(tuple(float(c) for c in coef))


def _sulci(x, y, spec: PhantomSpec, rng: np.random.Generator, half_width_mm: float) -> np.ndarray:
    a, b, _ = spec.brain_axes_mm
    out = np.zeros(x.shape, dtype=bool)
    for theta in rng.uniform(0, 2 * math.pi, size=spec.sulcus_count):
        d = np.array([math.cos(theta), math.sin(theta)])
        # in-plane boundary point of the brain ellipse along direction d
        r_edge = 1.0 / math.sqrt((d[0] / a) ** 2 + (d[1] / b) ** 2)
        along = x * d[0] + y * d[1]
        across = -x * d[1] + y * d[0]
        out |= (np.abs(across) <= half_width_mm) & (along >= r_edge - spec.sulcus_depth_mm)
    return out


def generate_case(spec: PhantomSpec, profile: SiteProfile, case_id: str = "",
                  dataset: str = "") -> PhantomCase:
    rng = np.random.default_rng(spec.seed)
    spacing = profile.spacing
    x, y, z = grid_coords_mm(spec.dims, spacing)
    a, b, c = spec.brain_axes_mm
    brain = (x / a) ** 2 + (y / b) ** 2 + (z / c) ** 2 <= 1.0

    ventricles = np.zeros(spec.dims, dtype=bool)
    for vp in spec.ventricles:
        ventricles |= vp.contains(x, y, z)
    if not ventricles.any():
        raise PhantomGeometryError("ventricles do not cover any voxel")
    if np.any(ventricles & ~brain):
        raise PhantomGeometryError("ventricle geometry escapes the brain")

    depth = ndimage.distance_transform_edt(brain, sampling=spacing.as_tuple())
    csf = brain & (depth < spec.subarachnoid_rim_mm)
    gm = brain & ~csf & (depth < spec.subarachnoid_rim_mm + spec.gm_thickness_mm)
    sulci = brain & _sulci(x, y, spec, rng, half_width_mm=spacing.x_mm / 2.0)
    csf |= sulci
    gm &= ~sulci
    csf |= ventricles
    gm &= ~ventricles
    wm = brain & ~csf & ~gm

    means = profile.adjusted_means()
    tissue = np.zeros(spec.dims)
    tissue[csf] = means["csf"]
    tissue[gm] = means["gm"]
    tissue[wm] = means["wm"]

    if profile.psf_sigma_mm > 0:
        sigma_vox = [profile.psf_sigma_mm / sp for sp in spacing.as_tuple()]
        tissue = ndimage.gaussian_filter(tissue, sigma_vox, mode="constant")
        tissue[~brain] = 0.0
    bias = bias_model_for(profile.bias_amplitude, rng)
    image = tissue * bias.field(spec.dims) if profile.bias_amplitude > 0 else tissue
    if profile.noise_sigma > 0:
        image = image + rng.normal(0.0, profile.noise_sigma, size=spec.dims)
    image = np.maximum(image, 0.0)

    z_slices = np.nonzero(ventricles.any(axis=(0, 1)))[0]
    acpc_z = int(math.floor(spec.acpc_z_fraction * spec.dims[2]))
    if acpc_z >= z_slices[0]:
        raise PhantomGeometryError(
            f"AC-PC slice {acpc_z} is not below the ventricles (lowest slice {z_slices[0]})")

    site = profile.site_id
    return PhantomCase(
        image=Volume(image, spacing, site, "raw", acpc_z),
        brain_mask=BinaryMask(brain, spacing, site, acpc_z),
        ventricle_mask=BinaryMask(ventricles, spacing, site, acpc_z),
        acpc_z=acpc_z,
        site_id=site,
        case_id=case_id,
        vendor=profile.vendor,
        dataset=dataset,
    )


def case_seed(cohort_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(cohort_seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Jitter:
    """Per-case anatomical variation applied by :func:`generate_cohort`."""

    brain_scale: float = 0.04
    ventricle_scale: tuple = (0.8, 1.25)
    center_mm: float = 1.5
    bend: float = 0.15

    @classmethod
    def none(cls) -> "Jitter":
        return cls(0.0, (1.0, 1.0), 0.0, 0.0)


def jitter_spec(spec: PhantomSpec, rng: np.random.Generator, jitter: Jitter) -> PhantomSpec:
    s_brain = 1.0 + rng.uniform(-jitter.brain_scale, jitter.brain_scale)
    s_vent = rng.uniform(*jitter.ventricle_scale)
    shift = rng.uniform(-jitter.center_mm, jitter.center_mm, size=3)
    d_bend = rng.uniform(-jitter.bend, jitter.bend)
    ventricles = []
    for vp in spec.ventricles:
        side = 1.0 if vp.center_mm[0] >= 0 else -1.0
        cx, cy, cz = vp.center_mm
        ventricles.append(replace(
            vp,
            center_mm=(cx * s_vent ** 0.5 + shift[0], cy + shift[1], cz + shift[2]),
            outer_radii_mm=tuple(r * s_vent for r in vp.outer_radii_mm),
            inner_radii_mm=tuple(r * s_vent for r in vp.inner_radii_mm),
            inner_offset_mm=tuple(o * s_vent for o in vp.inner_offset_mm),
            bend=vp.bend + side * d_bend,
        ))
    return replace(spec, brain_axes_mm=tuple(r * s_brain for r in spec.brain_axes_mm),
                   ventricles=tuple(ventricles))


def generate_cohort(n: int, spec_template: PhantomSpec, profiles: list, seed: int,
                    jitter: Optional[Jitter] = Jitter(), dataset: str = "",
                    id_prefix: str = "case") -> list[PhantomCase]:
    """``n`` cases with per-case anatomy jitter, cycling through ``profiles``."""
    if n < 1:
        raise ValueError("cohort size must be at least 1")
    if not profiles:
        raise ValueError("at least one site profile is required")
    cases = []
    for i in range(n):
        s = case_seed(seed, i)
        spec = replace(spec_template, seed=s)
        if jitter is not None:
            spec = jitter_spec(spec, np.random.default_rng([s, 1]), jitter)
        profile = profiles[i % len(profiles)]
        cases.append(generate_case(spec, profile, case_id=f"{id_prefix}{i:03d}", dataset=dataset))
    return cases


def default_profiles(domain: str = "source") -> list[SiteProfile]:
    """Three vendor profiles for a named domain.

    ``source`` is a clean, well-contrasted domain; ``target`` domains are
    noisier, with stronger bias fields and altered contrast and spacing.
    """
    if domain == "source":
        noise = (10.0, 10.0, 11.0)
        bias = (0.15, 0.2, 0.15)
        gammas = (1.0, 1.05, 0.95)
        psf = (1.5, 1.5, 1.5)
        spacings = (Spacing(2.0, 2.0, 5.0),) * 3
    else:
        noise = (18.0, 20.0, 22.0)
        bias = (0.3, 0.35, 0.25)
        gammas = (1.3, 1.45, 1.2)
        psf = (2.5, 2.5, 2.5)
        spacings = (Spacing(2.1, 2.1, 5.0), Spacing(1.95, 1.95, 5.0), Spacing(2.2, 2.2, 4.8))
    means = {"csf": 60.0, "gm": 260.0, "wm": 360.0}
    return [SiteProfile(f"{domain}-{vendor}", dict(means), noise_sigma=n, bias_amplitude=b,
                        contrast_gamma=g, spacing=sp, vendor=vendor, psf_sigma_mm=ps)
            for vendor, n, b, g, ps, sp in zip(VENDORS, noise, bias, gammas, psf, spacings)]


def target_spec(template: PhantomSpec = PhantomSpec()) -> PhantomSpec:
    """Anatomy shift for target domains: enlarged, narrower-walled ventricles."""
    ventricles = tuple(replace(vp, outer_radii_mm=tuple(r * s for r, s in zip(vp.outer_radii_mm, (1.15, 1.1, 1.1))),
                               inner_radii_mm=tuple(r * s for r, s in zip(vp.inner_radii_mm, (1.25, 1.1, 1.1))))
                       for vp in template.ventricles)
    return replace(template, ventricles=ventricles)

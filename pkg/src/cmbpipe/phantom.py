"""Synthetic SWI-like phantoms with planted microbleeds and mimics.

Phantoms provide verifiable ground truth: every planted CMB is a radially
symmetric Gaussian hypointensity whose alpha-fraction isosurface is known
in closed form, so the ground-truth mask can be computed analytically
rather than traced by hand. Mimics (dark vessel tubes and calcification
blobs) are planted the same way but excluded from the ground truth — they
exist to create false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomSpecError
from .rng import derive_rng
from .scanio import Acquisition, ScanManifestEntry
from .volume import LabelMask, Volume3D, WorldPoint

DIAMETER_RANGE_MM = (2.0, 10.0)  # clinical CMB size range
MIN_CMB_SEPARATION_MM = 4.0  # surface-to-surface
ALPHA_GT_THRESHOLD = 0.65

# alpha(r) = exp(-r^2 / (2 sigma^2)) for the planted profile, so the
# alpha > t isosurface is the sphere r < sigma * sqrt(2 ln(1/t)).
GT_RADIUS_FACTOR = math.sqrt(2.0 * math.log(1.0 / ALPHA_GT_THRESHOLD))


def profile_sigma_mm(diameter_mm: float) -> float:
    """Gaussian width of a planted CMB: the visible dip spans ~ the nominal diameter."""
    return diameter_mm / 4.0


def gt_radius_mm(diameter_mm: float) -> float:
    """Radius of the analytic alpha > 0.65 ground-truth sphere."""
    return profile_sigma_mm(diameter_mm) * GT_RADIUS_FACTOR


@dataclass(frozen=True)
class CMBSpec:
    center: WorldPoint
    diameter_mm: float
    contrast: float  # fractional dip depth in (0, 1]


@dataclass(frozen=True)
class VesselSpec:
    start: WorldPoint
    end: WorldPoint
    diameter_mm: float
    contrast: float


@dataclass(frozen=True)
class CalcificationSpec:
    center: WorldPoint
    diameter_mm: float
    contrast: float


@dataclass(frozen=True)
class BackgroundSpec:
    base: float = 100.0
    smooth_amplitude: float = 2.0
    noise_sigma: float = 2.0


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (256, 256, 256)
    spacing: float = 1.0
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    cmbs: tuple[CMBSpec, ...] = ()
    vessels: tuple[VesselSpec, ...] = ()
    calcifications: tuple[CalcificationSpec, ...] = ()
    seed: int = 0


def _segment_point_distance(p0: np.ndarray, p1: np.ndarray, x: np.ndarray) -> float:
    seg = p1 - p0
    denom = float(seg @ seg)
    t = 0.0 if denom == 0 else float(np.clip((x - p0) @ seg / denom, 0.0, 1.0))
    return float(np.linalg.norm(x - (p0 + t * seg)))


def validate_spec(spec: PhantomSpec) -> None:
    if spec.spacing <= 0:
        raise PhantomSpecError(f"spacing must be positive, got {spec.spacing}")
    extent = np.asarray(spec.dims) * spec.spacing
    for idx, cmb in enumerate(spec.cmbs):
        if not (DIAMETER_RANGE_MM[0] <= cmb.diameter_mm <= DIAMETER_RANGE_MM[1]):
            raise PhantomSpecError(
                f"cmb {idx}: diameter {cmb.diameter_mm} mm outside the clinical range {DIAMETER_RANGE_MM}"
            )
        if not (0.0 < cmb.contrast <= 1.0):
            raise PhantomSpecError(f"cmb {idx}: contrast {cmb.contrast} outside (0, 1]")
        if np.any(np.asarray(cmb.center) < 0) or np.any(np.asarray(cmb.center) > extent):
            raise PhantomSpecError(f"cmb {idx}: center {tuple(cmb.center)} outside the volume")
    for i, a in enumerate(spec.cmbs):
        for j in range(i + 1, len(spec.cmbs)):
            b = spec.cmbs[j]
            gap = (
                float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))
                - a.diameter_mm / 2.0
                - b.diameter_mm / 2.0
            )
            if gap < MIN_CMB_SEPARATION_MM:
                raise PhantomSpecError(
                    f"cmbs {i} and {j} are {gap:.2f} mm apart surface-to-surface "
                    f"(minimum {MIN_CMB_SEPARATION_MM} mm)"
                )
    # Mimics must not overlap CMBs (or each other, for blobs).
    blobs = [(np.asarray(c.center), c.diameter_mm / 2.0, f"cmb {i}") for i, c in enumerate(spec.cmbs)]
    calcs = [(np.asarray(c.center), c.diameter_mm / 2.0, f"calcification {i}") for i, c in enumerate(spec.calcifications)]
    for i, (cc, cr, cname) in enumerate(calcs):
        for oc, orad, oname in blobs + calcs[:i]:
            if float(np.linalg.norm(cc - oc)) - cr - orad <= 0.0:
                raise PhantomSpecError(f"{cname} overlaps {oname}")
    for vi, vessel in enumerate(spec.vessels):
        p0, p1 = np.asarray(vessel.start, float), np.asarray(vessel.end, float)
        vr = vessel.diameter_mm / 2.0
        for oc, orad, oname in blobs + calcs:
            if _segment_point_distance(p0, p1, oc) - vr - orad <= 0.0:
                raise PhantomSpecError(f"vessel {vi} overlaps {oname}")


def _axis_coords(spec: PhantomSpec):
    return [np.arange(n, dtype=np.float64) * spec.spacing for n in spec.dims]


def _smooth_field(spec: PhantomSpec) -> np.ndarray:
    """Low-frequency multiplicative-free additive field, max amplitude = smooth_amplitude."""
    amp = spec.background.smooth_amplitude
    if amp == 0.0:
        return np.zeros(spec.dims)
    rng = derive_rng(spec.seed, "background")
    coeff = rng.standard_normal((3, 3, 3))
    coeff[0, 0, 0] = 0.0  # DC belongs to `base`
    xs = _axis_coords(spec)
    basis = []
    for axis in range(3):
        extent = spec.dims[axis] * spec.spacing
        freq = np.arange(3)[:, None] * np.pi / extent
        basis.append(np.cos(freq * xs[axis][None, :]))
    fld = np.einsum("pqr,pi,qj,rk->ijk", coeff, basis[0], basis[1], basis[2], optimize=True)
    peak = np.abs(fld).max()
    return fld * (amp / peak) if peak > 0 else fld


def _gaussian_dip(arr: np.ndarray, spec: PhantomSpec, center, sigma_mm: float, contrast: float) -> None:
    """Multiply a local box of ``arr`` by (1 - contrast * exp(-r^2 / 2 sigma^2))."""
    reach = 4.0 * sigma_mm
    c = np.asarray(center, dtype=np.float64)
    lo = np.maximum(np.floor((c - reach) / spec.spacing).astype(int), 0)
    hi = np.minimum(np.ceil((c + reach) / spec.spacing).astype(int) + 1, spec.dims)
    if np.any(lo >= hi):
        return
    xs = [np.arange(lo[a], hi[a], dtype=np.float64) * spec.spacing - c[a] for a in range(3)]
    r2 = xs[0][:, None, None] ** 2 + xs[1][None, :, None] ** 2 + xs[2][None, None, :] ** 2
    arr[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] *= 1.0 - contrast * np.exp(-r2 / (2.0 * sigma_mm**2))


def _tube_dip(arr: np.ndarray, spec: PhantomSpec, vessel: VesselSpec) -> None:
    p0 = np.asarray(vessel.start, dtype=np.float64)
    p1 = np.asarray(vessel.end, dtype=np.float64)
    sigma = profile_sigma_mm(vessel.diameter_mm)
    reach = 4.0 * sigma
    lo = np.maximum(np.floor((np.minimum(p0, p1) - reach) / spec.spacing).astype(int), 0)
    hi = np.minimum(np.ceil((np.maximum(p0, p1) + reach) / spec.spacing).astype(int) + 1, spec.dims)
    if np.any(lo >= hi):
        return
    xs = [np.arange(lo[a], hi[a], dtype=np.float64) * spec.spacing for a in range(3)]
    gx, gy, gz = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1)
    seg = p1 - p0
    denom = float(seg @ seg)
    t = np.clip((pts - p0) @ seg / denom, 0.0, 1.0) if denom > 0 else np.zeros(pts.shape[:-1])
    nearest = p0 + t[..., None] * seg
    d2 = np.sum((pts - nearest) ** 2, axis=-1)
    arr[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] *= 1.0 - vessel.contrast * np.exp(-d2 / (2.0 * sigma**2))


def _gt_sphere(labels: np.ndarray, spec: PhantomSpec, cmb: CMBSpec) -> None:
    radius = gt_radius_mm(cmb.diameter_mm)
    c = np.asarray(cmb.center, dtype=np.float64)
    lo = np.maximum(np.floor((c - radius) / spec.spacing).astype(int), 0)
    hi = np.minimum(np.ceil((c + radius) / spec.spacing).astype(int) + 1, spec.dims)
    if np.any(lo >= hi):
        return
    xs = [np.arange(lo[a], hi[a], dtype=np.float64) * spec.spacing - c[a] for a in range(3)]
    r2 = xs[0][:, None, None] ** 2 + xs[1][None, :, None] ** 2 + xs[2][None, None, :] ** 2
    labels[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] |= (r2 < radius**2).astype(np.uint8)


def generate_phantom(
    spec: PhantomSpec, scan_id: str = "phantom-0000", subject_id: str | None = None, path: str = ""
) -> tuple[Volume3D, LabelMask, ScanManifestEntry]:
    """Deterministically render a phantom, its analytic ground truth, and a manifest entry."""
    validate_spec(spec)
    arr = _smooth_field(spec)
    arr += float(spec.background.base)
    for cmb in spec.cmbs:
        _gaussian_dip(arr, spec, cmb.center, profile_sigma_mm(cmb.diameter_mm), cmb.contrast)
    for calc in spec.calcifications:
        _gaussian_dip(arr, spec, calc.center, profile_sigma_mm(calc.diameter_mm), calc.contrast)
    for vessel in spec.vessels:
        _tube_dip(arr, spec, vessel)
    if spec.background.noise_sigma > 0:
        arr += derive_rng(spec.seed, "noise").normal(0.0, spec.background.noise_sigma, spec.dims)

    labels = np.zeros(spec.dims, dtype=np.uint8)
    for cmb in spec.cmbs:
        _gt_sphere(labels, spec, cmb)

    spacing3 = (spec.spacing,) * 3
    volume = Volume3D(arr, spacing3, (0.0, 0.0, 0.0))
    mask = LabelMask(labels, spacing3, (0.0, 0.0, 0.0))
    entry = ScanManifestEntry(
        scan_id=scan_id,
        subject_id=subject_id if subject_id is not None else scan_id,
        dataset_tag="PHANTOM",
        path=path,
        cmb_centers=tuple(c.center for c in spec.cmbs),
        p_cmb=None,
        acquisition=Acquisition(3.0, 20.0, spec.spacing, "PHANTOM-SIM"),
    )
    return volume, mask, entry


def random_phantom_spec(
    seed: int,
    dims: tuple[int, int, int] = (256, 256, 256),
    spacing: float = 1.0,
    n_cmbs: int | None = None,
    n_cmbs_range: tuple[int, int] = (1, 10),
    diameter_range: tuple[float, float] = (2.0, 10.0),
    contrast_range: tuple[float, float] = (0.5, 0.9),
    n_vessels: int = 0,
    n_calcifications: int = 0,
    background: BackgroundSpec = BackgroundSpec(),
    snap_centers: bool = True,
) -> PhantomSpec:
    """Place non-overlapping objects by seeded rejection sampling.

    Centers snap to voxel centers by default so the analytic ground truth of
    even a 2 mm CMB contains the voxel it was planted in.
    """
    rng = derive_rng(seed, "placement")
    if n_cmbs is None:
        n_cmbs = int(rng.integers(n_cmbs_range[0], n_cmbs_range[1] + 1))
    extent = np.asarray(dims) * spacing

    placed: list[tuple[np.ndarray, float]] = []

    def try_place(radius: float, margin: float) -> np.ndarray | None:
        if np.any(extent - 2.0 * margin <= 0):
            return None  # object cannot fit this volume at all
        for _ in range(200):
            c = rng.uniform(margin, extent - margin)
            if snap_centers:
                c = np.rint(c / spacing) * spacing
            if all(np.linalg.norm(c - pc) - radius - pr >= MIN_CMB_SEPARATION_MM for pc, pr in placed):
                return c
        return None

    cmbs = []
    for _ in range(n_cmbs):
        d = float(rng.uniform(*diameter_range))
        c = try_place(d / 2.0, d / 2.0 + 8.0)
        if c is None:
            break
        placed.append((c, d / 2.0))
        cmbs.append(CMBSpec(WorldPoint(*(float(x) for x in c)), d, float(rng.uniform(*contrast_range))))

    calcs = []
    for _ in range(n_calcifications):
        d = float(rng.uniform(2.0, 6.0))
        c = try_place(d / 2.0, d / 2.0 + 8.0)
        if c is None:
            continue
        placed.append((c, d / 2.0))
        calcs.append(CalcificationSpec(WorldPoint(*(float(x) for x in c)), d, float(rng.uniform(*contrast_range))))

    vessels = []
    for _ in range(n_vessels):
        d = float(rng.uniform(1.0, 2.0))
        axis = int(rng.integers(0, 3))
        for _ in range(200):
            p0 = rng.uniform(8.0, extent - 8.0)
            p1 = p0.copy()
            p1[axis] = extent[axis] - 8.0
            p0a = p0.copy()
            p0a[axis] = 8.0
            clear = all(
                _segment_point_distance(p0a, p1, pc) - d / 2.0 - pr >= MIN_CMB_SEPARATION_MM
                for pc, pr in placed
            )
            if clear:
                vessels.append(
                    VesselSpec(
                        WorldPoint(*(float(x) for x in p0a)),
                        WorldPoint(*(float(x) for x in p1)),
                        d,
                        float(rng.uniform(0.4, 0.7)),
                    )
                )
                break

    return PhantomSpec(
        dims=tuple(dims),
        spacing=spacing,
        background=background,
        cmbs=tuple(cmbs),
        vessels=tuple(vessels),
        calcifications=tuple(calcs),
        seed=seed,
    )

"""MRI-specific stochastic training-time transforms.

Eight transforms: elastic deformation, bias field, rotation, flipping,
blurring, motion ghosting, Gibbs ringing, and additive-multiplicative
noise. Spatial transforms move image and mask identically (trilinear vs
nearest-neighbor); intensity transforms touch the image only. Composition
order is fixed spatial -> intensity: intensity artifacts are
acquisition-stage effects applied to the already-positioned anatomy.

Randomness is counter-based: each transform draws from a generator keyed
by (master_seed, scan_id, transform index), so outputs are independent of
thread count and call order, and the returned parameter record replays any
output exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .rng import derive_rng, derive_seed
from .volume import LabelMask, Volume3D, require_same_geometry

AXES = (0, 1, 2)


# ---------------------------------------------------------------------------
# Individual transforms
# ---------------------------------------------------------------------------

def _voxel_sigma(sigma_mm: float, spacing) -> tuple[float, float, float]:
    return tuple(sigma_mm / s for s in spacing)


def _warp(v: Volume3D, m: LabelMask | None, coords: np.ndarray):
    fill = float(v.intensities.min())
    out = ndimage.map_coordinates(v.intensities, coords, order=1, mode="constant", cval=fill)
    warped_v = v.with_intensities(out)
    warped_m = None
    if m is not None:
        lab = ndimage.map_coordinates(m.labels, coords, order=0, mode="constant", cval=0)
        warped_m = m.with_labels(lab)
    return warped_v, warped_m


def elastic_deform(
    v: Volume3D,
    m: LabelMask | None,
    control_spacing_mm: float = 32.0,
    displacement_mm: float = 3.0,
    seed: int = 0,
):
    """Smooth random displacement field (B-spline upsampled control grid).

    The field is scaled so its largest displacement vector has length
    ``displacement_mm`` exactly.
    """
    if m is not None:
        require_same_geometry(v, m, "image and mask")
    if control_spacing_mm <= 0 or displacement_mm < 0:
        raise ConfigError("control_spacing_mm must be positive and displacement_mm non-negative")
    dims = v.dims
    coords = np.indices(dims, dtype=np.float32)
    if displacement_mm == 0.0:
        return (*_warp(v, m, coords), {"displacement_mm": 0.0})

    rng = derive_rng(seed, "elastic")
    grid_shape = tuple(
        max(2, int(np.ceil((n - 1) * s / control_spacing_mm)) + 1) for n, s in zip(dims, v.spacing)
    )
    control = rng.standard_normal((3,) + grid_shape).astype(np.float32)
    scale = [(gs - 1) / max(n - 1, 1) for gs, n in zip(grid_shape, dims)]
    sample = np.stack([coords[a] * scale[a] for a in range(3)]).astype(np.float32)
    disp = np.stack(
        [ndimage.map_coordinates(control[a], sample, order=3, mode="nearest") for a in range(3)]
    )
    norm = np.sqrt(np.sum(disp**2, axis=0)).max()
    if norm > 0:
        disp *= displacement_mm / norm
    # displacement is in mm; convert to voxel units per axis
    for a in range(3):
        disp[a] /= v.spacing[a]
    warped = _warp(v, m, coords + disp)
    return (*warped, {"displacement_mm": float(displacement_mm)})


def _rotation_matrix(angles_deg) -> np.ndarray:
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def rotate_volume(v: Volume3D, m: LabelMask | None, angles_deg):
    """Rotate about the grid center; trilinear for the image, nearest for the mask."""
    if m is not None:
        require_same_geometry(v, m, "image and mask")
    rot = _rotation_matrix(angles_deg)
    center = (np.asarray(v.dims, dtype=np.float64) - 1.0) / 2.0
    inv = rot.T
    offset = center - inv @ center
    fill = float(v.intensities.min())
    out = ndimage.affine_transform(v.intensities, inv, offset=offset, order=1, mode="constant", cval=fill)
    rotated_v = v.with_intensities(out)
    rotated_m = None
    if m is not None:
        lab = ndimage.affine_transform(m.labels, inv, offset=offset, order=0, mode="constant", cval=0)
        rotated_m = m.with_labels(lab)
    return rotated_v, rotated_m


def flip_volume(v: Volume3D, m: LabelMask | None, axes):
    """Mirror along the given axes; an involution for any fixed axis set."""
    if m is not None:
        require_same_geometry(v, m, "image and mask")
    axes = tuple(int(a) for a in axes)
    if any(a not in AXES for a in axes):
        raise ConfigError(f"flip axes must be in {AXES}, got {axes}")
    flipped_v = v.with_intensities(np.flip(v.intensities, axes) if axes else v.intensities)
    flipped_m = m.with_labels(np.flip(m.labels, axes)) if (m is not None and axes) else m
    return flipped_v, flipped_m


def bias_field(v: Volume3D, order: int = 3, amplitude: float = 0.2, seed: int = 0) -> Volume3D:
    """Multiplicative low-order polynomial field, spatial mean exactly 1."""
    if order < 1 or amplitude < 0:
        raise ConfigError("bias field needs order >= 1 and amplitude >= 0")
    if amplitude == 0.0:
        return v
    rng = derive_rng(seed, "bias")
    axes = [np.linspace(-1.0, 1.0, n) for n in v.dims]
    fld = np.zeros(v.dims)
    for p in range(order + 1):
        for q in range(order + 1 - p):
            for r in range(order + 1 - p - q):
                if p == q == r == 0:
                    continue
                coeff = rng.standard_normal()
                fld += coeff * np.multiply.outer(
                    np.multiply.outer(axes[0] ** p, axes[1] ** q), axes[2] ** r
                )
    peak = np.abs(fld).max()
    if peak > 0:
        fld = 1.0 + amplitude * fld / peak
    else:
        fld = np.ones(v.dims)
    fld /= fld.mean()
    return v.with_intensities(v.intensities * fld)


def blur_volume(v: Volume3D, sigma_mm: float) -> Volume3D:
    if sigma_mm < 0:
        raise ConfigError(f"blur sigma must be non-negative, got {sigma_mm}")
    if sigma_mm == 0.0:
        return v
    return v.with_intensities(ndimage.gaussian_filter(v.intensities, _voxel_sigma(sigma_mm, v.spacing)))


def motion_ghost(v: Volume3D, n_ghosts: int, intensity: float, axis: int = 2) -> Volume3D:
    """Attenuate every n_ghosts-th k-space line along the phase-encode axis.

    The DC line is never modulated, so the volume mean is preserved. A delta
    input turns into n_ghosts equally spaced replicas along ``axis``.
    """
    if n_ghosts < 2:
        raise ConfigError(f"n_ghosts must be >= 2, got {n_ghosts}")
    if not (0.0 <= intensity <= 1.0):
        raise ConfigError(f"ghost intensity must be in [0, 1], got {intensity}")
    if axis not in AXES:
        raise ConfigError(f"axis must be in {AXES}, got {axis}")
    if intensity == 0.0:
        return v
    spectrum = np.fft.fft(v.intensities, axis=axis)
    n = v.dims[axis]
    modulated = np.arange(n) % n_ghosts == 0
    modulated[0] = False  # DC excluded by construction
    shape = [1, 1, 1]
    shape[axis] = n
    gain = np.where(modulated, 1.0 - intensity, 1.0).reshape(shape)
    out = np.fft.ifft(spectrum * gain, axis=axis).real
    return v.with_intensities(out)


def gibbs_ringing(v: Volume3D, retain_fraction: float) -> Volume3D:
    """Truncate the outer k-space per axis (centered low-pass box) and invert."""
    if not (0.0 < retain_fraction <= 1.0):
        raise ConfigError(f"retain_fraction must be in (0, 1], got {retain_fraction}")
    if retain_fraction == 1.0:
        return v
    spectrum = np.fft.fftshift(np.fft.fftn(v.intensities))
    keep = np.zeros(v.dims, dtype=bool)
    window = []
    for n in v.dims:
        n_keep = max(1, int(round(retain_fraction * n)))
        lo = n // 2 - n_keep // 2
        window.append(slice(lo, lo + n_keep))
    keep[tuple(window)] = True
    out = np.fft.ifftn(np.fft.ifftshift(np.where(keep, spectrum, 0.0))).real
    return v.with_intensities(out)


def noise_add_mult(v: Volume3D, sigma_add: float, sigma_mult: float, seed: int = 0) -> Volume3D:
    """I * (1 + eps_mult) + eps_add with independent Gaussian fields."""
    if sigma_add < 0 or sigma_mult < 0:
        raise ConfigError("noise sigmas must be non-negative")
    if sigma_add == 0.0 and sigma_mult == 0.0:
        return v
    rng = derive_rng(seed, "noise")
    out = v.intensities
    if sigma_mult > 0:
        out = out * (1.0 + rng.normal(0.0, sigma_mult, v.dims))
    if sigma_add > 0:
        out = out + rng.normal(0.0, sigma_add, v.dims)
    return v.with_intensities(out)


# ---------------------------------------------------------------------------
# Spec-driven application
# ---------------------------------------------------------------------------

def _check_prob(p: float) -> float:
    if not (0.0 <= p <= 1.0):
        raise ConfigError(f"probability must be in [0, 1], got {p}")
    return float(p)


@dataclass(frozen=True)
class ElasticSpec:
    enabled: bool = True
    probability: float = 0.5
    control_spacing_mm: float = 32.0
    max_displacement_mm: float = 3.0

    def __post_init__(self):
        _check_prob(self.probability)
        if self.control_spacing_mm <= 0 or self.max_displacement_mm < 0:
            raise ConfigError("elastic ranges must be non-negative (control spacing positive)")


@dataclass(frozen=True)
class RotationSpec:
    enabled: bool = True
    probability: float = 0.5
    max_degrees: float = 10.0

    def __post_init__(self):
        _check_prob(self.probability)
        if self.max_degrees < 0:
            raise ConfigError("rotation range must be non-negative")


@dataclass(frozen=True)
class FlipSpec:
    enabled: bool = True
    probability: float = 0.5
    axes: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        _check_prob(self.probability)
        if any(a not in AXES for a in self.axes):
            raise ConfigError(f"flip axes must be in {AXES}")


@dataclass(frozen=True)
class BiasFieldSpec:
    enabled: bool = True
    probability: float = 0.5
    order: int = 3
    max_amplitude: float = 0.2

    def __post_init__(self):
        _check_prob(self.probability)
        if self.order < 1 or self.max_amplitude < 0:
            raise ConfigError("bias field needs order >= 1 and non-negative amplitude")


@dataclass(frozen=True)
class BlurSpec:
    enabled: bool = True
    probability: float = 0.5
    sigma_range_mm: tuple[float, float] = (0.5, 1.5)

    def __post_init__(self):
        _check_prob(self.probability)
        if self.sigma_range_mm[0] < 0 or self.sigma_range_mm[1] < self.sigma_range_mm[0]:
            raise ConfigError("blur sigma range must be non-negative and ordered")


@dataclass(frozen=True)
class GhostSpec:
    enabled: bool = True
    probability: float = 0.5
    n_ghosts_range: tuple[int, int] = (2, 4)
    max_intensity: float = 0.3

    def __post_init__(self):
        _check_prob(self.probability)
        if self.n_ghosts_range[0] < 2 or self.n_ghosts_range[1] < self.n_ghosts_range[0]:
            raise ConfigError("n_ghosts range must start at >= 2 and be ordered")
        if not (0.0 <= self.max_intensity <= 1.0):
            raise ConfigError("ghost intensity must be in [0, 1]")


@dataclass(frozen=True)
class GibbsSpec:
    enabled: bool = True
    probability: float = 0.5
    retain_range: tuple[float, float] = (0.6, 1.0)

    def __post_init__(self):
        _check_prob(self.probability)
        lo, hi = self.retain_range
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError("k-space retention range must lie in (0, 1]")


@dataclass(frozen=True)
class NoiseSpec:
    enabled: bool = True
    probability: float = 0.5
    max_additive_sigma: float = 0.05
    max_multiplicative_sigma: float = 0.05

    def __post_init__(self):
        _check_prob(self.probability)
        if self.max_additive_sigma < 0 or self.max_multiplicative_sigma < 0:
            raise ConfigError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class AugmentSpec:
    elastic: ElasticSpec = field(default_factory=ElasticSpec)
    rotation: RotationSpec = field(default_factory=RotationSpec)
    flip: FlipSpec = field(default_factory=FlipSpec)
    bias_field: BiasFieldSpec = field(default_factory=BiasFieldSpec)
    blur: BlurSpec = field(default_factory=BlurSpec)
    motion_ghost: GhostSpec = field(default_factory=GhostSpec)
    gibbs_ringing: GibbsSpec = field(default_factory=GibbsSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    master_seed: int = 0

    @classmethod
    def disabled(cls, master_seed: int = 0) -> "AugmentSpec":
        spec = cls(master_seed=master_seed)
        return replace(
            spec,
            **{
                name: replace(getattr(spec, name), enabled=False)
                for name in TRANSFORM_ORDER
            },
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, rec: dict) -> "AugmentSpec":
        kwargs = {}
        builders = {
            "elastic": ElasticSpec,
            "rotation": RotationSpec,
            "flip": FlipSpec,
            "bias_field": BiasFieldSpec,
            "blur": BlurSpec,
            "motion_ghost": GhostSpec,
            "gibbs_ringing": GibbsSpec,
            "noise": NoiseSpec,
        }
        for name, builder in builders.items():
            if name in rec:
                sub = dict(rec[name])
                for key, value in sub.items():
                    if isinstance(value, list):
                        sub[key] = tuple(value)
                kwargs[name] = builder(**sub)
        if "master_seed" in rec:
            kwargs["master_seed"] = int(rec["master_seed"])
        return cls(**kwargs)


# Fixed composition order: spatial transforms first, then intensity.
TRANSFORM_ORDER = (
    "elastic",
    "rotation",
    "flip",
    "bias_field",
    "blur",
    "motion_ghost",
    "gibbs_ringing",
    "noise",
)


def apply_augmentation(v: Volume3D, m: LabelMask, spec: AugmentSpec, scan_id: str):
    """Apply the enabled transforms to an image/mask pair.

    Returns (volume, mask, record) where ``record`` lists, per transform,
    whether it fired and the exact parameters used — enough to replay the
    output bit-for-bit.
    """
    require_same_geometry(v, m, "image and mask")
    record = []

    def fires(index: int, sub) -> tuple[bool, np.random.Generator]:
        rng = derive_rng(spec.master_seed, scan_id, index)
        return bool(sub.enabled and rng.uniform() < sub.probability), rng

    for index, name in enumerate(TRANSFORM_ORDER):
        sub = getattr(spec, name)
        applied, rng = fires(index, sub)
        params: dict = {}
        if name == "elastic" and applied:
            displacement = float(rng.uniform(0.0, sub.max_displacement_mm))
            sub_seed = derive_seed(spec.master_seed, scan_id, index, "field")
            v, m, _ = elastic_deform(v, m, sub.control_spacing_mm, displacement, seed=sub_seed)
            params = {
                "control_spacing_mm": sub.control_spacing_mm,
                "displacement_mm": displacement,
                "seed": sub_seed,
            }
        elif name == "rotation" and applied:
            angles = [float(a) for a in rng.uniform(-sub.max_degrees, sub.max_degrees, 3)]
            v, m = rotate_volume(v, m, angles)
            params = {"angles_deg": angles}
        elif name == "flip" and applied:
            axes = tuple(int(a) for a in sub.axes if rng.uniform() < 0.5)
            v, m = flip_volume(v, m, axes)
            params = {"axes": list(axes)}
        elif name == "bias_field" and applied:
            amplitude = float(rng.uniform(0.0, sub.max_amplitude))
            sub_seed = derive_seed(spec.master_seed, scan_id, index, "field")
            v = bias_field(v, sub.order, amplitude, seed=sub_seed)
            params = {"order": sub.order, "amplitude": amplitude, "seed": sub_seed}
        elif name == "blur" and applied:
            sigma = float(rng.uniform(*sub.sigma_range_mm))
            v = blur_volume(v, sigma)
            params = {"sigma_mm": sigma}
        elif name == "motion_ghost" and applied:
            n_ghosts = int(rng.integers(sub.n_ghosts_range[0], sub.n_ghosts_range[1] + 1))
            intensity = float(rng.uniform(0.0, sub.max_intensity))
            axis = int(rng.integers(0, 3))
            v = motion_ghost(v, n_ghosts, intensity, axis)
            params = {"n_ghosts": n_ghosts, "intensity": intensity, "axis": axis}
        elif name == "gibbs_ringing" and applied:
            retain = float(rng.uniform(*sub.retain_range))
            v = gibbs_ringing(v, retain)
            params = {"retain_fraction": retain}
        elif name == "noise" and applied:
            sigma_add = float(rng.uniform(0.0, sub.max_additive_sigma))
            sigma_mult = float(rng.uniform(0.0, sub.max_multiplicative_sigma))
            sub_seed = derive_seed(spec.master_seed, scan_id, index, "field")
            v = noise_add_mult(v, sigma_add, sigma_mult, seed=sub_seed)
            params = {"sigma_add": sigma_add, "sigma_mult": sigma_mult, "seed": sub_seed}
        record.append({"transform": name, "applied": applied, "params": params})
    return v, m, record

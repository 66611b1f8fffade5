"""Canonical 3D volume representation and resampling.

Volumes are axis-aligned scalar grids in a fixed axis order
(sagittal-index, coronal-index, axial-index), i.e. array axis 0 runs along
world x, axis 1 along world y, axis 2 along world z. Orientation is
normalized at load time (see ``cmbpipe.scanio``), so nothing here handles
rotation matrices. All operations are pure: inputs are never mutated and
the stored arrays are read-only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigError,
    DegenerateNormalizationWarning,
    GeometryMismatchError,
    RejectedInputError,
)

Triple = tuple[float, float, float]


class VoxelIndex(NamedTuple):
    i: int
    j: int
    k: int


class WorldPoint(NamedTuple):
    """A position in world millimeters."""

    x: float
    y: float
    z: float


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_geometry_fields(spacing, origin) -> tuple[Triple, Triple]:
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    if len(spacing) != 3 or len(origin) != 3:
        raise RejectedInputError("spacing and origin must have 3 components")
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise RejectedInputError(f"spacing must be positive and finite, got {spacing}")
    if any(not np.isfinite(o) for o in origin):
        raise RejectedInputError(f"origin must be finite, got {origin}")
    return spacing, origin


@dataclass(frozen=True)
class Volume3D:
    """Dense scalar grid with physical voxel spacing and world origin.

    ``intensities`` has shape ``dims`` and is stored float64, read-only.
    ``origin`` is the world position (mm) of the center of voxel (0,0,0).
    """

    intensities: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim != 3 or arr.size == 0:
            raise RejectedInputError(f"intensities must be a non-empty 3D array, got shape {arr.shape}")
        # min/max propagate NaN and expose Inf, in one pass each
        if not (np.isfinite(arr.min()) and np.isfinite(arr.max())):
            raise RejectedInputError("intensities contain NaN or Inf")
        spacing, origin = _check_geometry_fields(self.spacing, self.origin)
        object.__setattr__(self, "intensities", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.intensities.shape

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    def with_intensities(self, arr: np.ndarray) -> "Volume3D":
        """New volume with the same geometry and different intensities."""
        return Volume3D(arr, self.spacing, self.origin)


@dataclass(frozen=True)
class LabelMask:
    """Binary label grid sharing geometry with its parent volume."""

    labels: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 3 or arr.size == 0:
            raise RejectedInputError(f"labels must be a non-empty 3D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            uniq = np.unique(arr)
            if not np.isin(uniq, (0, 1)).all():
                raise RejectedInputError(f"labels must be binary, got values {uniq[:8]}")
            arr = arr.astype(np.uint8)
        elif arr.max(initial=0) > 1:
            raise RejectedInputError("labels must be binary")
        spacing, origin = _check_geometry_fields(self.spacing, self.origin)
        object.__setattr__(self, "labels", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing))

    def with_labels(self, arr: np.ndarray) -> "LabelMask":
        return LabelMask(arr, self.spacing, self.origin)


@dataclass(frozen=True)
class ProbabilityVolume:
    """Per-voxel probability in [0, 1], float32, geometry of the parent volume."""

    values: np.ndarray
    spacing: Triple = (1.0, 1.0, 1.0)
    origin: Triple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 3 or arr.size == 0:
            raise RejectedInputError(f"values must be a non-empty 3D array, got shape {arr.shape}")
        lo, hi = float(arr.min()), float(arr.max())
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise RejectedInputError("probabilities contain NaN or Inf")
        if lo < 0.0 or hi > 1.0:
            raise RejectedInputError(f"probabilities outside [0, 1]: min {lo}, max {hi}")
        spacing, origin = _check_geometry_fields(self.spacing, self.origin)
        object.__setattr__(self, "values", _freeze(arr))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


Grid = Volume3D | LabelMask | ProbabilityVolume


def same_geometry(a: Grid, b: Grid, atol: float = 1e-9) -> bool:
    return (
        a.dims == b.dims
        and np.allclose(a.spacing, b.spacing, rtol=0.0, atol=atol)
        and np.allclose(a.origin, b.origin, rtol=0.0, atol=atol)
    )


def require_same_geometry(a: Grid, b: Grid, what: str = "grids") -> None:
    if not same_geometry(a, b):
        raise GeometryMismatchError(
            f"{what} disagree: dims {a.dims} vs {b.dims}, spacing {a.spacing} vs "
            f"{b.spacing}, origin {a.origin} vs {b.origin}"
        )


def world_to_voxel(v: Grid, p: WorldPoint) -> tuple[np.ndarray, bool]:
    """Map a world point (mm) to a continuous voxel coordinate.

    Returns ``(coords, inside)``; out-of-grid coordinates are legal, the
    boolean says whether the point lies within the voxel-center span
    ``[0, dim-1]`` on every axis.
    """
    coords = (np.asarray(p, dtype=np.float64) - np.asarray(v.origin)) / np.asarray(v.spacing)
    inside = bool(np.all(coords >= 0.0) and np.all(coords <= np.asarray(v.dims) - 1.0))
    return coords, inside


def voxel_to_world(v: Grid, c) -> WorldPoint:
    """Inverse of :func:`world_to_voxel`; ``c`` may be fractional."""
    w = np.asarray(v.origin) + np.asarray(c, dtype=np.float64) * np.asarray(v.spacing)
    return WorldPoint(*(float(x) for x in w))


def _interp_axis(arr: np.ndarray, positions: np.ndarray, axis: int, fill: float) -> np.ndarray:
    """Linear interpolation of ``arr`` along one axis at fractional ``positions``.

    Positions outside the voxel-center span [0, n-1] produce ``fill``.
    """
    n = arr.shape[axis]
    outside = (positions < 0.0) | (positions > n - 1.0)
    t = np.clip(positions, 0.0, n - 1.0)
    i0 = np.floor(t).astype(np.intp)
    i0 = np.minimum(i0, n - 2) if n > 1 else np.zeros_like(i0)
    w = t - i0
    lo = np.take(arr, i0, axis=axis)
    hi = np.take(arr, np.minimum(i0 + 1, n - 1), axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = len(positions)
    wb = w.reshape(shape)
    out = lo * (1.0 - wb) + hi * wb
    mask = outside.reshape(shape)
    return np.where(mask, fill, out)


def resample_isotropic(
    v: Volume3D,
    target_spacing: float = 1.0,
    target_dims: tuple[int, int, int] = (256, 256, 256),
) -> Volume3D:
    """Trilinearly resample onto an isotropic grid centered on the input field of view.

    The physical center of the input grid maps to the physical center of the
    output grid and the output origin is set so world coordinates are
    preserved. Regions outside the input field of view are filled with the
    input minimum (SWI background is dark; filling with anything darker
    would fabricate CMB-like rims).
    """
    if not np.isfinite(target_spacing) or target_spacing <= 0:
        raise ConfigError(f"target_spacing must be positive, got {target_spacing}")
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or any(d < 1 for d in target_dims):
        raise ConfigError(f"target_dims must be 3 positive integers, got {target_dims}")

    in_dims = np.asarray(v.dims, dtype=np.float64)
    in_spacing = np.asarray(v.spacing)
    center = np.asarray(v.origin) + (in_dims - 1.0) * in_spacing / 2.0
    out_dims = np.asarray(target_dims, dtype=np.float64)
    out_origin = center - (out_dims - 1.0) * target_spacing / 2.0

    fill = float(v.intensities.min())
    arr = v.intensities
    for axis in range(3):
        world = out_origin[axis] + np.arange(target_dims[axis], dtype=np.float64) * target_spacing
        positions = (world - v.origin[axis]) / v.spacing[axis]
        arr = _interp_axis(arr, positions, axis, fill)
    return Volume3D(arr, (target_spacing,) * 3, tuple(float(o) for o in out_origin))


def normalize_intensity(v: Volume3D, lo_pct: float = 1.0, hi_pct: float = 99.0) -> Volume3D:
    """Clamp to the [lo_pct, hi_pct] percentile window and map affinely to [0, 1].

    A collapsed window (constant volume) returns all zeros and emits a
    :class:`DegenerateNormalizationWarning`.
    """
    if not (0.0 <= lo_pct < hi_pct <= 100.0):
        raise ConfigError(f"need 0 <= lo_pct < hi_pct <= 100, got ({lo_pct}, {hi_pct})")
    p_lo, p_hi = np.percentile(v.intensities, [lo_pct, hi_pct])
    if p_hi <= p_lo:
        warnings.warn(
            f"percentile window collapsed (P{lo_pct} = P{hi_pct} = {p_lo}); returning zeros",
            DegenerateNormalizationWarning,
            stacklevel=2,
        )
        return v.with_intensities(np.zeros(v.dims))
    out = (np.clip(v.intensities, p_lo, p_hi) - p_lo) / (p_hi - p_lo)
    return v.with_intensities(out)


def adjust_contrast(v: Volume3D, gamma: float) -> Volume3D:
    """Gamma contrast adjustment: per-voxel ``x -> x**gamma`` on [0, 1] intensities."""
    if not np.isfinite(gamma) or gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    lo, hi = float(v.intensities.min()), float(v.intensities.max())
    if lo < 0.0 or hi > 1.0:
        raise RejectedInputError(f"adjust_contrast needs intensities in [0, 1], got [{lo}, {hi}]")
    return v.with_intensities(np.power(v.intensities, gamma))

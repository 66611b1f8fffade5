"""Volumetric ground-truth masks from CMB center-point annotations.

A microbleed annotated only by its center point is grown into a mask by
estimating, for every voxel of a small patch around the center, the
partial-volume fraction

    alpha = (I_pixel - I_mean) / (I_center - I_mean)

where I_center is the (snapped) center intensity and I_mean the mean
background intensity sampled on a thin spherical shell just outside the
patch. Voxels with alpha above a dataset-dependent threshold are labeled,
and only the connected component containing the center is kept so that a
vessel crossing the patch cannot leak into the label.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    AnnotationSkippedWarning,
    ConfigError,
    DegenerateAnnotationError,
    DegenerateAnnotationWarning,
)
from .rng import derive_rng
from .volume import LabelMask, Volume3D, VoxelIndex, WorldPoint, world_to_voxel

DEFAULT_ALPHA_THRESHOLD = 0.65
ALT_ALPHA_THRESHOLD = 0.52  # shorter-echo / different-contrast datasets
DEFAULT_PATCH_HALFWIDTH_MM = 5.0
SNAP_RADIUS_MM = 1.0
SHELL_INNER_MM = 5.0
SHELL_OUTER_MM = 7.0


@dataclass(frozen=True)
class CMBAnnotation:
    """One point-annotated microbleed."""

    center: WorldPoint
    alpha_threshold: float = DEFAULT_ALPHA_THRESHOLD
    patch_halfwidth_mm: float = DEFAULT_PATCH_HALFWIDTH_MM

    def __post_init__(self):
        if not (0.0 < self.alpha_threshold < 1.0):
            raise ConfigError(f"alpha_threshold must be in (0, 1), got {self.alpha_threshold}")
        if self.patch_halfwidth_mm <= 0:
            raise ConfigError(f"patch_halfwidth_mm must be positive, got {self.patch_halfwidth_mm}")


def alpha_fraction(v: Volume3D, pixel: VoxelIndex, center: VoxelIndex, mean_intensity: float) -> float:
    """Partial-volume fraction of one voxel relative to a CMB center.

    Raises :class:`DegenerateAnnotationError` when the putative CMB has no
    contrast against the background mean (denominator below 1e-9 of the
    volume's dynamic range).
    """
    i_pixel = float(v.intensities[tuple(pixel)])
    i_center = float(v.intensities[tuple(center)])
    dynamic_range = float(v.intensities.max() - v.intensities.min())
    if abs(i_center - mean_intensity) < 1e-9 * max(dynamic_range, 1e-300):
        raise DegenerateAnnotationError(
            f"center intensity {i_center} equals background mean {mean_intensity}: no contrast"
        )
    return (i_pixel - mean_intensity) / (i_center - mean_intensity)


def _offsets_within(radius_mm: float, spacing) -> np.ndarray:
    """Integer voxel offsets whose physical length is <= radius_mm."""
    half = [int(np.floor(radius_mm / s)) for s in spacing]
    axes = [np.arange(-h, h + 1) for h in half]
    oi, oj, ok = np.meshgrid(*axes, indexing="ij")
    offs = np.stack([oi.ravel(), oj.ravel(), ok.ravel()], axis=1)
    dist = np.linalg.norm(offs * np.asarray(spacing), axis=1)
    return offs[dist <= radius_mm]


def _snap_to_darkest(v: Volume3D, center_vox: np.ndarray, snap_radius_mm: float) -> VoxelIndex:
    """Darkest voxel within snap_radius_mm of the clicked center."""
    base = np.rint(center_vox).astype(int)
    offs = _offsets_within(snap_radius_mm, v.spacing)
    cand = base + offs
    dims = np.asarray(v.dims)
    ok = np.all((cand >= 0) & (cand < dims), axis=1)
    cand = cand[ok]
    vals = v.intensities[cand[:, 0], cand[:, 1], cand[:, 2]]
    best = cand[int(np.argmin(vals))]
    return VoxelIndex(*(int(x) for x in best))


def _shell_mean(v: Volume3D, center: VoxelIndex, inner_mm: float, outer_mm: float) -> float:
    """Mean intensity over the spherical shell (inner_mm, outer_mm] around center."""
    offs = _offsets_within(outer_mm, v.spacing)
    dist = np.linalg.norm(offs * np.asarray(v.spacing), axis=1)
    offs = offs[dist > inner_mm]
    cand = np.asarray(center) + offs
    dims = np.asarray(v.dims)
    ok = np.all((cand >= 0) & (cand < dims), axis=1)
    cand = cand[ok]
    if len(cand) == 0:
        return float(v.intensities.mean())
    return float(v.intensities[cand[:, 0], cand[:, 1], cand[:, 2]].mean())


# Precomputed 26-neighborhood for the component walk.
_NEIGH26 = np.array(
    [(di, dj, dk) for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1) if (di, dj, dk) != (0, 0, 0)]
)


def _component_containing(candidate: np.ndarray, start: tuple[int, int, int]) -> np.ndarray:
    """26-connected component of a boolean array containing ``start`` (flood fill)."""
    out = np.zeros_like(candidate)
    if not candidate[start]:
        return out
    stack = [start]
    out[start] = True
    dims = candidate.shape
    while stack:
        p = stack.pop()
        for d in _NEIGH26:
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            if 0 <= q[0] < dims[0] and 0 <= q[1] < dims[1] and 0 <= q[2] < dims[2]:
                if candidate[q] and not out[q]:
                    out[q] = True
                    stack.append(q)
    return out


def synthesize_mask(
    v: Volume3D,
    annotations,
    snap_radius_mm: float = SNAP_RADIUS_MM,
    shell_inner_mm: float = SHELL_INNER_MM,
    shell_outer_mm: float = SHELL_OUTER_MM,
) -> LabelMask:
    """Grow volumetric labels from point annotations; union over annotations.

    Per annotation: snap the click to the darkest voxel within
    ``snap_radius_mm``, measure the background mean on the
    (shell_inner_mm, shell_outer_mm] shell, threshold alpha inside the
    patch cube, keep the component containing the center. Degenerate or
    out-of-volume annotations are skipped with a warning; the rest are
    still processed.
    """
    if not (0.0 < shell_inner_mm < shell_outer_mm):
        raise ConfigError(f"need 0 < shell_inner < shell_outer, got ({shell_inner_mm}, {shell_outer_mm})")
    if snap_radius_mm < 0:
        raise ConfigError(f"snap_radius_mm must be non-negative, got {snap_radius_mm}")
    labels = np.zeros(v.dims, dtype=np.uint8)
    dims = np.asarray(v.dims)
    for idx, ann in enumerate(annotations):
        coords, inside = world_to_voxel(v, ann.center)
        if not inside:
            warnings.warn(
                f"annotation {idx} at {tuple(ann.center)} mm is outside the volume; skipped",
                AnnotationSkippedWarning,
                stacklevel=2,
            )
            continue
        center = _snap_to_darkest(v, coords, snap_radius_mm)
        mean_intensity = _shell_mean(v, center, shell_inner_mm, shell_outer_mm)

        i_center = float(v.intensities[tuple(center)])
        dynamic_range = float(v.intensities.max() - v.intensities.min())
        if abs(i_center - mean_intensity) < 1e-9 * max(dynamic_range, 1e-300):
            warnings.warn(
                f"annotation {idx} at {tuple(ann.center)} mm has no contrast; skipped",
                DegenerateAnnotationWarning,
                stacklevel=2,
            )
            continue

        half = np.array([int(np.floor(ann.patch_halfwidth_mm / s)) for s in v.spacing])
        lo = np.maximum(np.asarray(center) - half, 0)
        hi = np.minimum(np.asarray(center) + half + 1, dims)
        patch = v.intensities[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
        alpha = (patch - mean_intensity) / (i_center - mean_intensity)
        candidate = alpha > ann.alpha_threshold
        local_center = tuple(np.asarray(center) - lo)
        component = _component_containing(candidate, local_center)
        labels[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]] |= component.astype(np.uint8)
    return LabelMask(labels, v.spacing, v.origin)


def partition_subjects(subject_ids, seed: int, fractions=(0.7, 0.1, 0.2)):
    """Randomly split subjects into (train, validation, test) id sets.

    The split is by subject, deterministic for a given seed, and independent
    of the input ordering. Sizes are the rounded fractions; the remainder
    goes to train.
    """
    subject_ids = list(subject_ids)
    ids = sorted(set(subject_ids))
    if len(ids) != len(subject_ids):
        raise ConfigError("subject_ids contains duplicates")
    if len(ids) < 3:
        raise ConfigError(f"need at least 3 subjects to partition, got {len(ids)}")
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be 3 non-negative values summing to 1, got {fractions}")

    n = len(ids)
    n_val = int(np.floor(fractions[1] * n + 0.5))
    n_test = int(np.floor(fractions[2] * n + 0.5))
    n_train = n - n_val - n_test
    if n_train < 0:
        raise ConfigError(f"rounded fractions exceed the subject count ({n_val} + {n_test} > {n})")

    order = derive_rng(seed, "partition").permutation(n)
    shuffled = [ids[i] for i in order]
    train = set(shuffled[:n_train])
    val = set(shuffled[n_train : n_train + n_val])
    test = set(shuffled[n_train + n_val :])
    return train, val, test

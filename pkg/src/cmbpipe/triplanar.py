"""Thickened-slice decomposition and multiplicative three-view fusion.

A canonical (cubic, isotropic) volume is cut into thickened 2D slices —
each plane stacked with its two neighbors as 3 channels — along the axial,
sagittal and coronal views. Per-slice probability predictions are
reassembled into one probability volume per view and fused voxel-wise by
multiplication: a detection survives only where all three views agree, so
any view near zero vetoes it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError, RejectedInputError
from .volume import LabelMask, ProbabilityVolume, Volume3D, require_same_geometry

VIEWS = ("axial", "sagittal", "coronal")
VIEW_AXIS = {"axial": 2, "sagittal": 0, "coronal": 1}


def _require_view(view: str) -> int:
    if view not in VIEW_AXIS:
        raise ConfigError(f"view must be one of {VIEWS}, got '{view}'")
    return VIEW_AXIS[view]


def _require_canonical(v: Volume3D | LabelMask) -> None:
    if len(set(v.dims)) != 1 or len(set(v.spacing)) != 1:
        raise RejectedInputError(
            f"volume must be canonical (cubic dims, isotropic spacing), got dims {v.dims} spacing {v.spacing}"
        )


def _plane(arr: np.ndarray, axis: int, index: int) -> np.ndarray:
    sel: list = [slice(None)] * arr.ndim
    sel[axis] = index
    return arr[tuple(sel)]  # a view; callers copy if they mutate


@dataclass(frozen=True)
class ThickSlice:
    """One plane plus its two neighbors, stacked as 3 channels.

    ``channels[1]`` is plane ``index``; channels 0 and 2 are the planes
    below and above with edge replication at the boundary. Channels are
    materialized on access so a full volume's worth of slices stays cheap.
    """

    view: str
    index: int
    parent: np.ndarray = field(repr=False)

    @property
    def axis(self) -> int:
        return VIEW_AXIS[self.view]

    @property
    def n_planes(self) -> int:
        return self.parent.shape[self.axis]

    @property
    def central(self) -> np.ndarray:
        return _plane(self.parent, self.axis, self.index)

    @property
    def channels(self) -> np.ndarray:
        axis, k, n = self.axis, self.index, self.n_planes
        below = _plane(self.parent, axis, max(k - 1, 0))
        above = _plane(self.parent, axis, min(k + 1, n - 1))
        return np.stack([below, self.central, above])


def extract_thick_slices(v: Volume3D, view: str) -> list[ThickSlice]:
    """One ThickSlice per plane of the chosen view, in plane order."""
    axis = _require_view(view)
    _require_canonical(v)
    n = v.dims[axis]
    return [ThickSlice(view, k, v.intensities) for k in range(n)]


def reassemble_view(planes, view: str, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> ProbabilityVolume:
    """Stack per-slice central predictions back into a probability volume."""
    axis = _require_view(view)
    planes = list(planes)
    n = len(planes)
    if n == 0:
        raise RejectedInputError("no planes to reassemble")
    planes = [np.asarray(p) for p in planes]
    shape = planes[0].shape
    for k, p in enumerate(planes):
        if p.ndim != 2 or p.shape != shape:
            raise RejectedInputError(f"plane {k} has shape {p.shape}, expected {shape}")
    if shape != (n, n):
        raise RejectedInputError(f"{n} planes of shape {shape} do not assemble into a canonical cube")
    arr = np.stack(planes, axis=axis, dtype=np.float32)
    return ProbabilityVolume(arr, spacing, origin)


def fuse_views(p_ax: ProbabilityVolume, p_sag: ProbabilityVolume, p_cor: ProbabilityVolume) -> ProbabilityVolume:
    """Per-voxel product of the three view probabilities (full-agreement fusion).

    The product is accumulated in float64 so the result is exactly
    symmetric in its arguments; any zero vetoes the voxel.
    """
    require_same_geometry(p_ax, p_sag, "view probability volumes")
    require_same_geometry(p_ax, p_cor, "view probability volumes")
    fused = p_ax.values.astype(np.float64) * p_sag.values * p_cor.values
    return ProbabilityVolume(fused, p_ax.spacing, p_ax.origin)


def binarize_fused(p: ProbabilityVolume, tau: float = 0.125) -> LabelMask:
    """Label voxels with fused probability strictly above tau (default 0.5^3)."""
    if not (0.0 < tau < 1.0):
        raise ConfigError(f"tau must be in (0, 1), got {tau}")
    return LabelMask((p.values > tau).astype(np.uint8), p.spacing, p.origin)


class SliceSegmenter(Protocol):
    """Contract for per-slice probability predictors (the trained-model seam)."""

    def segment(self, thick_slice: ThickSlice) -> np.ndarray:
        """Probability plane for the central slice, same in-plane dims, values in [0, 1]."""
        ...


def segment_view(v: Volume3D, view: str, segmenter: SliceSegmenter, jobs: int = 1) -> ProbabilityVolume:
    """Run a segmenter over every thick slice of a view and reassemble.

    Slices are independent work items; results are gathered in slice order,
    so the output is identical for any ``jobs`` count.
    """
    slices = extract_thick_slices(v, view)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            planes = list(pool.map(segmenter.segment, slices))
    else:
        planes = [segmenter.segment(s) for s in slices]
    return reassemble_view(planes, view, v.spacing, v.origin)


def segment_volume(v: Volume3D, segmenters: dict, jobs: int = 1) -> dict:
    """Per-view probability volumes from per-view segmenters (keys: axial/sagittal/coronal)."""
    missing = set(VIEWS) - set(segmenters)
    if missing:
        raise ConfigError(f"segmenters missing for views {sorted(missing)}")
    return {view: segment_view(v, view, segmenters[view], jobs) for view in VIEWS}

"""Connected-component detection, clinical size filtering, and metrics.

A fused binary mask becomes a list of discrete detections (connected
components with centroid, volume and bounding box), detections are matched
one-to-one against ground-truth components, and per-scan TP/FP/FN/DSC roll
up into per-dataset rows: TP/FP/FN per scan are means, DSC is the mean of
per-scan DSC, and sensitivity/precision are pooled over scans
(sum TP / (sum TP + sum FN), sum TP / (sum TP + sum FP)). Undefined values
render as "NA" and never enter a mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .volume import LabelMask, VoxelIndex, WorldPoint, require_same_geometry, voxel_to_world

DEFAULT_MIN_VOLUME_MM3 = 4.2  # minimum clinical CMB size (2 mm diameter sphere)
DEFAULT_MATCH_DISTANCE_MM = 2.5  # radius of the largest "small" CMB
NA = "NA"


@dataclass(frozen=True)
class DetectedCMB:
    """One connected component of a binary mask."""

    id: int
    centroid_mm: WorldPoint
    volume_mm3: float
    voxel_count: int
    bbox: tuple[VoxelIndex, VoxelIndex]
    voxels: frozenset = frozenset()  # flat voxel indices, used for overlap matching

    def __post_init__(self):
        if self.voxel_count < 1:
            raise ConfigError("a detection must contain at least one voxel")


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairing: tuple  # (pred_id, gt_id) pairs


@dataclass(frozen=True)
class ScanMetrics:
    tp: int
    fp: int
    fn: int
    dsc: float
    sensitivity: float | None  # None marks NA (no ground-truth components)
    precision: float | None  # None marks NA (no predictions)


def connected_components(m: LabelMask, connectivity: int = 26) -> list[DetectedCMB]:
    """Maximal connected sets of the mask under 6- or 26-connectivity.

    Components are ordered by the lexicographically smallest (k, j, i)
    voxel they contain, so the listing is independent of how the mask was
    produced or traversed.
    """
    if connectivity not in (6, 26):
        raise ConfigError(f"connectivity must be 6 or 26, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, 1 if connectivity == 6 else 3)
    labeled, n = ndimage.label(m.labels, structure=structure)
    voxel_volume = m.voxel_volume_mm3
    dims = m.dims

    raw = []
    for slices, label in zip(ndimage.find_objects(labeled), range(1, n + 1)):
        local = labeled[slices] == label
        li, lj, lk = np.nonzero(local)
        i = li + slices[0].start
        j = lj + slices[1].start
        k = lk + slices[2].start
        first = np.lexsort((i, j, k))[0]  # smallest (k, j, i)
        key = (int(k[first]), int(j[first]), int(i[first]))
        centroid_vox = (float(i.mean()), float(j.mean()), float(k.mean()))
        bbox = (
            VoxelIndex(int(i.min()), int(j.min()), int(k.min())),
            VoxelIndex(int(i.max()), int(j.max()), int(k.max())),
        )
        flat = np.ravel_multi_index((i, j, k), dims)
        raw.append((key, centroid_vox, bbox, len(i), frozenset(flat.tolist())))

    raw.sort(key=lambda item: item[0])
    out = []
    for comp_id, (_, centroid_vox, bbox, count, flat) in enumerate(raw, start=1):
        out.append(
            DetectedCMB(
                id=comp_id,
                centroid_mm=voxel_to_world(m, centroid_vox),
                volume_mm3=count * voxel_volume,
                voxel_count=count,
                bbox=bbox,
                voxels=flat,
            )
        )
    return out


def filter_by_size(dets, min_volume_mm3: float = DEFAULT_MIN_VOLUME_MM3) -> list[DetectedCMB]:
    """Keep components at least as large as the minimum clinical size."""
    if min_volume_mm3 < 0:
        raise ConfigError(f"min_volume_mm3 must be non-negative, got {min_volume_mm3}")
    return [d for d in dets if d.volume_mm3 >= min_volume_mm3]


def match_detections(pred, gt_components, max_dist_mm: float = DEFAULT_MATCH_DISTANCE_MM) -> MatchResult:
    """One-to-one greedy matching in ascending centroid distance.

    A prediction may match a ground-truth component if they share a voxel
    or their centroids lie within ``max_dist_mm``. Unmatched predictions
    count as FP, unmatched ground truth as FN.
    """
    candidates = []
    for p in pred:
        for g in gt_components:
            dist = float(np.linalg.norm(np.asarray(p.centroid_mm) - np.asarray(g.centroid_mm)))
            if dist <= max_dist_mm or (p.voxels and g.voxels and not p.voxels.isdisjoint(g.voxels)):
                candidates.append((dist, p.id, g.id))
    candidates.sort()
    used_p, used_g, pairs = set(), set(), []
    for dist, pid, gid in candidates:
        if pid in used_p or gid in used_g:
            continue
        used_p.add(pid)
        used_g.add(gid)
        pairs.append((pid, gid))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(pred) - tp, fn=len(gt_components) - tp, pairing=tuple(pairs))


def scan_metrics(pred_mask: LabelMask, gt_mask: LabelMask, match: MatchResult) -> ScanMetrics:
    """Voxel-level DSC plus the component counts of a match.

    Both masks empty is a correct negative: DSC = 1.0 and sensitivity /
    precision undefined (NA).
    """
    require_same_geometry(pred_mask, gt_mask, "prediction and ground-truth masks")
    p = int(pred_mask.labels.sum())
    g = int(gt_mask.labels.sum())
    inter = int(np.logical_and(pred_mask.labels, gt_mask.labels).sum())
    dsc = 1.0 if p + g == 0 else 2.0 * inter / (p + g)
    sens = match.tp / (match.tp + match.fn) if match.tp + match.fn > 0 else None
    prec = match.tp / (match.tp + match.fp) if match.tp + match.fp > 0 else None
    return ScanMetrics(tp=match.tp, fp=match.fp, fn=match.fn, dsc=dsc, sensitivity=sens, precision=prec)


def evaluate_scan(
    pred_mask: LabelMask,
    gt_mask: LabelMask,
    connectivity: int = 26,
    min_volume_mm3: float = DEFAULT_MIN_VOLUME_MM3,
    max_dist_mm: float = DEFAULT_MATCH_DISTANCE_MM,
):
    """Component detection + size filter + matching + metrics for one scan.

    The size filter is applied to both predictions and ground-truth
    components, so a perfect segmenter scores perfectly: sub-clinical
    ground-truth components are excluded from the task rather than counted
    as misses.
    """
    pred = filter_by_size(connected_components(pred_mask, connectivity), min_volume_mm3)
    gt = filter_by_size(connected_components(gt_mask, connectivity), min_volume_mm3)
    match = match_detections(pred, gt, max_dist_mm)
    return scan_metrics(pred_mask, gt_mask, match), pred, gt


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def pooled_sensitivity(tp, fn) -> float | None:
    """Pooled recall: totals (or per-scan means) in, single rate out."""
    return tp / (tp + fn) if tp + fn > 0 else None


def pooled_precision(tp, fp) -> float | None:
    return tp / (tp + fp) if tp + fp > 0 else None


@dataclass(frozen=True)
class DatasetRow:
    tag: str
    n_scans: int
    tp_per_scan: float
    fp_per_scan: float
    fn_per_scan: float
    dsc: float
    sensitivity: float | None
    precision: float | None

    def to_json(self) -> dict:
        return {
            "dataset": self.tag,
            "n_scans": self.n_scans,
            "tp_per_scan": self.tp_per_scan,
            "fp_per_scan": self.fp_per_scan,
            "fn_per_scan": self.fn_per_scan,
            "dsc": self.dsc,
            "sensitivity": self.sensitivity,
            "precision": self.precision,
        }


def _make_row(tag: str, metrics: list[ScanMetrics]) -> DatasetRow:
    n = len(metrics)
    tp = sum(m.tp for m in metrics)
    fp = sum(m.fp for m in metrics)
    fn = sum(m.fn for m in metrics)
    return DatasetRow(
        tag=tag,
        n_scans=n,
        tp_per_scan=tp / n,
        fp_per_scan=fp / n,
        fn_per_scan=fn / n,
        dsc=sum(m.dsc for m in metrics) / n,
        sensitivity=pooled_sensitivity(tp, fn),
        precision=pooled_precision(tp, fp),
    )


def aggregate_metrics(per_scan: list[ScanMetrics], tags: list[str]) -> list[DatasetRow]:
    """Per-dataset rows plus an "All" row pooling every scan.

    Rows are ordered by tag alphabetically with "All" last, so the table is
    bit-stable across runs.
    """
    if not per_scan:
        raise ConfigError("aggregate_metrics needs at least one scan")
    if len(per_scan) != len(tags):
        raise ConfigError(f"{len(per_scan)} metric records vs {len(tags)} tags")
    groups: dict[str, list[ScanMetrics]] = {}
    for m, tag in zip(per_scan, tags):
        groups.setdefault(tag, []).append(m)
    rows = [_make_row(tag, group) for tag, group in sorted(groups.items())]
    rows.append(_make_row("All", list(per_scan)))
    return rows


def _fmt(value: float | None) -> str:
    return NA if value is None else f"{value:.2f}"


def format_metrics_table(rows: list[DatasetRow]) -> str:
    header = ("Dataset", "Scans", "TP/scan", "FP/scan", "FN/scan", "DSC", "Sensitivity", "Precision")
    body = [
        (
            r.tag,
            str(r.n_scans),
            f"{r.tp_per_scan:.2f}",
            f"{r.fp_per_scan:.2f}",
            f"{r.fn_per_scan:.2f}",
            f"{r.dsc:.2f}",
            _fmt(r.sensitivity),
            _fmt(r.precision),
        )
        for r in rows
    ]
    widths = [max(len(header[c]), *(len(row[c]) for row in body)) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)

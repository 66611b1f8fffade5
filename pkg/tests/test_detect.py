import numpy as np
import pytest

from cmbpipe.detect import (
    DetectedCMB,
    aggregate_metrics,
    connected_components,
    evaluate_scan,
    filter_by_size,
    format_metrics_table,
    match_detections,
    pooled_precision,
    pooled_sensitivity,
    scan_metrics,
    ScanMetrics,
)
from cmbpipe.errors import ConfigError, GeometryMismatchError
from cmbpipe.volume import LabelMask, WorldPoint

from oracles import sphere_voxel_volume


def mask_from_voxels(voxels, dims=(16, 16, 16), spacing=(1.0, 1.0, 1.0)):
    arr = np.zeros(dims, dtype=np.uint8)
    for v in voxels:
        arr[v] = 1
    return LabelMask(arr, spacing, (0.0, 0.0, 0.0))


class TestConnectedComponents:
    def test_face_adjacent_one_component_both_ways(self):
        m = mask_from_voxels([(3, 3, 3), (3, 3, 4)])
        assert len(connected_components(m, 6)) == 1
        assert len(connected_components(m, 26)) == 1

    def test_corner_diagonal_depends_on_connectivity(self):
        m = mask_from_voxels([(3, 3, 3), (4, 4, 4)])
        assert len(connected_components(m, 26)) == 1
        assert len(connected_components(m, 6)) == 2

    def test_empty_mask(self):
        assert connected_components(mask_from_voxels([])) == []

    def test_fields(self):
        m = mask_from_voxels([(2, 3, 4), (2, 3, 5)], spacing=(0.5, 0.5, 2.0))
        (det,) = connected_components(m)
        assert det.voxel_count == 2
        assert det.volume_mm3 == pytest.approx(2 * 0.5 * 0.5 * 2.0)
        assert det.centroid_mm == pytest.approx((1.0, 1.5, 9.0))
        assert det.bbox == ((2, 3, 4), (2, 3, 5))

    def test_ordering_deterministic_and_layout_independent(self, rng):
        arr = (rng.uniform(0, 1, (24, 24, 24)) > 0.93).astype(np.uint8)
        m = LabelMask(arr)
        ref = connected_components(m)
        alt = connected_components(LabelMask(np.asfortranarray(arr)))
        assert [(d.centroid_mm, d.voxel_count) for d in ref] == [
            (d.centroid_mm, d.voxel_count) for d in alt
        ]
        keys = [(d.bbox[0].k, d.bbox[0].j, d.bbox[0].i) for d in ref]
        assert all(d.id == i + 1 for i, d in enumerate(ref))

    def test_bad_connectivity(self):
        with pytest.raises(ConfigError):
            connected_components(mask_from_voxels([]), 18)


class TestFilterBySize:
    def test_three_voxel_component_removed_at_clinical_threshold(self):
        m = mask_from_voxels([(3, 3, 3), (3, 3, 4), (3, 3, 5)])
        dets = connected_components(m)
        assert filter_by_size(dets, 4.2) == []

    def test_five_voxel_component_kept(self):
        m = mask_from_voxels([(3, 3, k) for k in range(3, 8)])
        dets = connected_components(m)
        assert len(filter_by_size(dets, 4.2)) == 1

    def test_two_mm_sphere_sits_below_clinical_minimum(self):
        # minimum clinical size: a 2 mm diameter sphere, 4/3 pi ~ 4.19 mm^3
        analytic = 4.0 / 3.0 * np.pi * 1.0**3
        assert analytic < 4.2
        measured = sphere_voxel_volume(1.0, 0.05)
        assert measured == pytest.approx(analytic, abs=0.02)
        assert measured < 4.2
        det = DetectedCMB(
            id=1,
            centroid_mm=WorldPoint(0, 0, 0),
            volume_mm3=measured,
            voxel_count=int(round(measured / 0.05**3)),
            bbox=((0, 0, 0), (1, 1, 1)),
        )
        assert filter_by_size([det], 4.2) == []


class TestMatching:
    def mk(self, det_id, centroid, voxels=frozenset()):
        return DetectedCMB(
            id=det_id,
            centroid_mm=WorldPoint(*centroid),
            volume_mm3=1.0,
            voxel_count=1,
            bbox=((0, 0, 0), (0, 0, 0)),
            voxels=voxels,
        )

    def test_centroid_distance_match(self):
        res = match_detections([self.mk(1, (1.0, 0, 0))], [self.mk(1, (0, 0, 0))], 2.5)
        assert (res.tp, res.fp, res.fn) == (1, 0, 0)

    def test_counting(self):
        gt = [self.mk(i, (10.0 * i, 0, 0)) for i in range(1, 6)]
        preds = [self.mk(i, (10.0 * i + 1.0, 0, 0)) for i in range(1, 5)]
        preds += [self.mk(5, (200.0, 0, 0)), self.mk(6, (300.0, 0, 0))]
        res = match_detections(preds, gt, 2.5)
        assert (res.tp, res.fp, res.fn) == (4, 2, 1)

    def test_one_to_one_greedy_prefers_nearer(self):
        gt = [self.mk(1, (0.0, 0, 0))]
        preds = [self.mk(1, (2.0, 0, 0)), self.mk(2, (1.0, 0, 0))]
        res = match_detections(preds, gt, 2.5)
        assert res.tp == 1 and res.fp == 1
        assert res.pairing == ((2, 1),)

    def test_overlap_matches_beyond_distance(self):
        shared = frozenset({42})
        res = match_detections(
            [self.mk(1, (0.0, 0, 0), shared)], [self.mk(1, (10.0, 0, 0), shared)], 2.5
        )
        assert res.tp == 1

    def test_invariant_counts(self, rng):
        for _ in range(20):
            n_gt, n_pred = int(rng.integers(0, 6)), int(rng.integers(0, 6))
            gt = [self.mk(i + 1, tuple(rng.uniform(0, 30, 3))) for i in range(n_gt)]
            preds = [self.mk(i + 1, tuple(rng.uniform(0, 30, 3))) for i in range(n_pred)]
            res = match_detections(preds, gt, 2.5)
            assert res.tp + res.fn == n_gt
            assert res.tp + res.fp == n_pred


class TestScanMetrics:
    def test_empty_empty_convention(self):
        empty = mask_from_voxels([])
        match = match_detections([], [], 2.5)
        m = scan_metrics(empty, empty, match)
        assert m.dsc == 1.0
        assert m.sensitivity is None and m.precision is None

    def test_identical_masks(self):
        mask = mask_from_voxels([(3, 3, 3), (3, 3, 4)])
        dets = connected_components(mask)
        m = scan_metrics(mask, mask, match_detections(dets, dets, 2.5))
        assert m.dsc == 1.0 and m.sensitivity == 1.0 and m.precision == 1.0

    def test_dsc_formula(self):
        pred = mask_from_voxels([(i, j, k) for i in range(4) for j in range(5) for k in range(5)])
        gt_vox = [(i, j, k) for i in range(2) for j in range(5) for k in range(5)]
        gt_vox += [(i + 10, j, k) for i in range(2) for j in range(5) for k in range(5)]
        gt = mask_from_voxels(gt_vox)
        m = scan_metrics(pred, gt, match_detections([], [], 2.5))
        assert m.dsc == pytest.approx(0.5)  # |P|=|G|=100, overlap 50

    def test_misaligned_masks_rejected(self):
        a = mask_from_voxels([], dims=(8, 8, 8))
        b = mask_from_voxels([], dims=(9, 9, 9))
        with pytest.raises(GeometryMismatchError):
            scan_metrics(a, b, match_detections([], [], 2.5))


def row_scans(tp, fp, fn, n, dsc=0.8):
    """n synthetic scans whose totals are tp/fp/fn."""
    out = []
    for i in range(n):
        t = tp // n + (1 if i < tp % n else 0)
        f = fp // n + (1 if i < fp % n else 0)
        m = fn // n + (1 if i < fn % n else 0)
        out.append(
            ScanMetrics(
                tp=t,
                fp=f,
                fn=m,
                dsc=dsc,
                sensitivity=t / (t + m) if t + m else None,
                precision=t / (t + f) if t + f else None,
            )
        )
    return out


# Reported per-scan means used as consistency fixtures:
# (tag, tp, fp, fn, expected sensitivity, expected precision)
REFERENCE_ROWS = [
    ("DS1r", 3.58, 2.00, 1.08, 0.77, 0.64),
    ("DS1s", 8.11, 1.75, 1.72, 0.83, 0.82),
    ("DS2", 1.00, 0.00, 1.00, 0.50, 1.00),
    ("DS3", 8.57, 1.43, 5.00, 0.63, 0.86),
    ("DS3n", 0.00, 0.00, 0.00, None, None),
    ("All", 6.75, 1.64, 1.92, 0.78, 0.80),
]


class TestAggregation:
    def test_pooled_formulas_reproduce_reference_rows(self):
        for tag, tp, fp, fn, sens, prec in REFERENCE_ROWS:
            got_sens = pooled_sensitivity(tp, fn)
            got_prec = pooled_precision(tp, fp)
            if sens is None:
                assert got_sens is None and got_prec is None
            else:
                assert abs(got_sens - sens) < 0.005, tag
                assert abs(got_prec - prec) < 0.005, tag

    def test_aggregate_through_scan_records(self):
        # integer-scaled scans reproducing the All row totals
        per_scan = row_scans(675, 164, 192, 100)
        rows = aggregate_metrics(per_scan, ["DS3"] * 100)
        all_row = rows[-1]
        assert all_row.tag == "All"
        assert all_row.tp_per_scan == pytest.approx(6.75)
        assert abs(all_row.sensitivity - 0.78) < 0.005
        assert abs(all_row.precision - 0.80) < 0.005

    def test_rows_ordered_alphabetical_then_all(self):
        per_scan = row_scans(10, 2, 3, 4)
        rows = aggregate_metrics(per_scan, ["DS2", "DS1r", "PHANTOM", "DS1r"])
        assert [r.tag for r in rows] == ["DS1r", "DS2", "PHANTOM", "All"]

    def test_na_rendering(self):
        per_scan = [ScanMetrics(0, 0, 0, 1.0, None, None)]
        rows = aggregate_metrics(per_scan, ["DS3n"])
        table = format_metrics_table(rows)
        line = [ln for ln in table.splitlines() if ln.startswith("DS3n")][0]
        assert "NA" in line and "1.00" in line

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate_metrics([], [])


class TestEvaluateScan:
    def test_size_filter_never_increases_counts(self, rng):
        for trial in range(10):
            arr_p = (rng.uniform(0, 1, (20, 20, 20)) > 0.9).astype(np.uint8)
            arr_g = (rng.uniform(0, 1, (20, 20, 20)) > 0.9).astype(np.uint8)
            pred, gt = LabelMask(arr_p), LabelMask(arr_g)
            loose, p0, g0 = evaluate_scan(pred, gt, min_volume_mm3=0.0)
            tight, p1, g1 = evaluate_scan(pred, gt, min_volume_mm3=3.0)
            assert len(p1) <= len(p0) and len(g1) <= len(g0)
            assert tight.fp <= loose.fp

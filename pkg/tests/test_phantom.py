import numpy as np
import pytest

from cmbpipe.detect import connected_components
from cmbpipe.errors import PhantomSpecError
from cmbpipe.phantom import (
    BackgroundSpec,
    CalcificationSpec,
    CMBSpec,
    PhantomSpec,
    VesselSpec,
    generate_phantom,
    gt_radius_mm,
    random_phantom_spec,
)
from cmbpipe.volume import WorldPoint

from oracles import alpha_ball_voxels


def test_no_cmbs_empty_ground_truth():
    spec = PhantomSpec(dims=(32, 32, 32), seed=1)
    _, gt, entry = generate_phantom(spec)
    assert gt.labels.sum() == 0
    assert entry.cmb_centers == ()
    assert entry.dataset_tag == "PHANTOM"


def test_same_seed_bit_identical():
    spec = random_phantom_spec(5, dims=(48, 48, 48), n_cmbs=3, n_vessels=1, n_calcifications=1)
    v1, m1, _ = generate_phantom(spec)
    v2, m2, _ = generate_phantom(spec)
    assert np.array_equal(v1.intensities, v2.intensities)
    assert np.array_equal(m1.labels, m2.labels)


def test_2mm_cmb_gt_matches_analytic_isosurface():
    center = WorldPoint(16.0, 16.0, 16.0)
    spec = PhantomSpec(
        dims=(32, 32, 32),
        background=BackgroundSpec(100.0, 0.0, 0.0),
        cmbs=(CMBSpec(center, 2.0, 0.8),),
        seed=0,
    )
    _, gt, _ = generate_phantom(spec)
    analytic = alpha_ball_voxels((32, 32, 32), 1.0, center, gt_radius_mm(2.0))
    assert np.array_equal(gt.labels, analytic)
    # the radius places exactly the center voxel inside for a 2 mm CMB
    assert gt.labels.sum() == 1


def test_gt_volume_within_one_shell_of_analytic():
    for diameter in (2.0, 5.0, 8.0, 10.0):
        center = WorldPoint(24.0, 24.0, 24.0)
        spec = PhantomSpec(
            dims=(48, 48, 48),
            background=BackgroundSpec(100.0, 0.0, 0.0),
            cmbs=(CMBSpec(center, diameter, 0.7),),
            seed=0,
        )
        _, gt, _ = generate_phantom(spec)
        r = gt_radius_mm(diameter)
        inner = alpha_ball_voxels((48, 48, 48), 1.0, center, max(r - 1.0, 0.0)).sum()
        outer = alpha_ball_voxels((48, 48, 48), 1.0, center, r + 1.0).sum()
        assert inner <= gt.labels.sum() <= outer


def test_planted_count_equals_component_count():
    for seed in range(5):
        spec = random_phantom_spec(seed, dims=(96, 96, 96), n_cmbs=6, diameter_range=(5.0, 9.0))
        assert len(spec.cmbs) == 6, "placement must succeed at this density"
        _, gt, _ = generate_phantom(spec)
        assert len(connected_components(gt, 26)) == 6


def test_profile_depth_matches_contrast():
    center = WorldPoint(24.0, 24.0, 24.0)
    spec = PhantomSpec(
        dims=(48, 48, 48),
        background=BackgroundSpec(100.0, 0.0, 0.0),
        cmbs=(CMBSpec(center, 8.0, 0.6),),
        seed=0,
    )
    vol, _, _ = generate_phantom(spec)
    assert vol.intensities[24, 24, 24] == pytest.approx(100.0 * (1 - 0.6), rel=1e-9)
    assert vol.intensities[0, 0, 0] == pytest.approx(100.0, rel=1e-6)


def test_cmb_separation_enforced():
    spec = PhantomSpec(
        dims=(64, 64, 64),
        cmbs=(
            CMBSpec(WorldPoint(30.0, 30.0, 30.0), 8.0, 0.7),
            CMBSpec(WorldPoint(38.0, 30.0, 30.0), 8.0, 0.7),  # 0 mm surface gap
        ),
        seed=0,
    )
    with pytest.raises(PhantomSpecError, match="surface-to-surface"):
        generate_phantom(spec)


def test_diameter_range_enforced():
    spec = PhantomSpec(
        dims=(64, 64, 64),
        cmbs=(CMBSpec(WorldPoint(30.0, 30.0, 30.0), 12.0, 0.7),),
        seed=0,
    )
    with pytest.raises(PhantomSpecError, match="diameter"):
        generate_phantom(spec)


def test_mimic_overlap_rejected():
    spec = PhantomSpec(
        dims=(64, 64, 64),
        cmbs=(CMBSpec(WorldPoint(30.0, 30.0, 30.0), 6.0, 0.7),),
        calcifications=(CalcificationSpec(WorldPoint(32.0, 30.0, 30.0), 4.0, 0.7),),
        seed=0,
    )
    with pytest.raises(PhantomSpecError, match="overlaps"):
        generate_phantom(spec)


def test_mimics_darken_image_but_not_ground_truth():
    base_spec = dict(dims=(64, 64, 64), background=BackgroundSpec(100.0, 0.0, 0.0), seed=0)
    clean = PhantomSpec(**base_spec)
    with_mimics = PhantomSpec(
        **base_spec,
        vessels=(VesselSpec(WorldPoint(8.0, 20.0, 20.0), WorldPoint(56.0, 20.0, 20.0), 2.0, 0.5),),
        calcifications=(CalcificationSpec(WorldPoint(40.0, 40.0, 40.0), 4.0, 0.6),),
    )
    v_clean, gt_clean, _ = generate_phantom(clean)
    v_mim, gt_mim, _ = generate_phantom(with_mimics)
    assert gt_mim.labels.sum() == gt_clean.labels.sum() == 0
    assert v_mim.intensities[20, 20, 20] < v_clean.intensities[20, 20, 20]  # vessel axis
    assert v_mim.intensities[40, 40, 40] < v_clean.intensities[40, 40, 40]  # calcification


def test_vessel_is_a_tube():
    spec = PhantomSpec(
        dims=(48, 48, 48),
        background=BackgroundSpec(100.0, 0.0, 0.0),
        vessels=(VesselSpec(WorldPoint(8.0, 24.0, 24.0), WorldPoint(40.0, 24.0, 24.0), 2.0, 0.5),),
        seed=0,
    )
    vol, _, _ = generate_phantom(spec)
    on_axis = vol.intensities[10:39, 24, 24]
    assert np.all(on_axis < 60.0)
    assert vol.intensities[24, 24, 40] == pytest.approx(100.0, rel=1e-6)


def test_random_spec_respects_separation():
    spec = random_phantom_spec(9, dims=(128, 128, 128), n_cmbs=8)
    for i, a in enumerate(spec.cmbs):
        for b in spec.cmbs[i + 1 :]:
            gap = (
                float(np.linalg.norm(np.asarray(a.center) - np.asarray(b.center)))
                - a.diameter_mm / 2
                - b.diameter_mm / 2
            )
            assert gap >= 4.0

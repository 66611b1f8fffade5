import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmbpipe.errors import ConfigError, DegenerateNormalizationWarning, RejectedInputError
from cmbpipe.volume import (
    Volume3D,
    WorldPoint,
    adjust_contrast,
    normalize_intensity,
    resample_isotropic,
    voxel_to_world,
    world_to_voxel,
)


class TestVolume3D:
    def test_rejects_nan(self):
        arr = np.zeros((4, 4, 4))
        arr[1, 2, 3] = np.nan
        with pytest.raises(RejectedInputError):
            Volume3D(arr)

    def test_rejects_bad_spacing(self):
        with pytest.raises(RejectedInputError):
            Volume3D(np.zeros((4, 4, 4)), spacing=(1.0, 0.0, 1.0))

    def test_immutable(self, small_volume):
        with pytest.raises(ValueError):
            small_volume.intensities[0, 0, 0] = 1.0


class TestResample:
    def test_constant_volume(self):
        v = Volume3D(np.full((16, 20, 12), 7.0), (2.0, 1.5, 3.0), (1.0, 2.0, 3.0))
        out = resample_isotropic(v, 1.0, (64, 64, 64))
        assert out.dims == (64, 64, 64)
        assert out.spacing == (1.0, 1.0, 1.0)
        assert np.all(out.intensities == 7.0)

    def test_default_targets_preserve_world_extent(self):
        v = Volume3D(np.zeros((128, 128, 128)), (2.0,) * 3, (0.0, 0.0, 0.0))
        out = resample_isotropic(v)
        assert out.dims == (256, 256, 256)
        assert [d * s for d, s in zip(out.dims, out.spacing)] == [256.0, 256.0, 256.0]
        # centers coincide
        in_center = (128 - 1) * 2.0 / 2.0
        out_center = out.origin[0] + (256 - 1) * 1.0 / 2.0
        assert out_center == pytest.approx(in_center, abs=1e-12)

    def test_linear_ramp_reproduced(self):
        n = 40
        ramp = np.broadcast_to((np.arange(n) * 2.0)[:, None, None], (n, n, n)).copy()
        v = Volume3D(ramp, (2.0,) * 3, (0.0, 0.0, 0.0))
        out = resample_isotropic(v, 1.0, (96, 96, 96))
        wx = out.origin[0] + np.arange(96)
        inside = (wx >= 0) & (wx <= (n - 1) * 2.0)
        line = out.intensities[:, 48, 48]
        assert np.abs(line[inside] - wx[inside]).max() < 1e-6

    def test_idempotent_on_target_geometry(self, rng):
        v = Volume3D(rng.normal(100, 10, (32, 32, 32)), (1.0,) * 3, (-15.5,) * 3)
        out = resample_isotropic(v, 1.0, (32, 32, 32))
        assert np.abs(out.intensities - v.intensities).max() < 1e-9
        assert out.origin == v.origin

    def test_bounded_by_input_range(self, rng):
        v = Volume3D(rng.normal(0, 50, (17, 23, 11)), (1.7, 0.9, 2.4), (5.0, -2.0, 0.0))
        out = resample_isotropic(v, 1.0, (64, 64, 64))
        assert out.intensities.min() >= v.intensities.min() - 1e-12
        assert out.intensities.max() <= v.intensities.max() + 1e-12

    def test_out_of_fov_fill_is_input_min(self):
        v = Volume3D(np.full((8, 8, 8), 50.0), (1.0,) * 3, (0.0, 0.0, 0.0))
        arr = np.asarray(v.intensities).copy()
        arr[0, 0, 0] = 10.0  # global minimum
        v = v.with_intensities(arr)
        out = resample_isotropic(v, 1.0, (32, 32, 32))
        assert out.intensities[0, 0, 0] == 10.0  # far corner is outside the 8^3 FOV

    def test_smooth_phantom_down_up_roundtrip(self):
        # SWI-like: dark air background, bright smooth blob (sigma 8 mm), so
        # the min-fill outside the intermediate FOV matches the background
        n = 48
        ax = np.arange(n) - (n - 1) / 2
        r2 = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
        blob = 40.0 + 60.0 * np.exp(-r2 / (2 * 8.0**2))
        v = Volume3D(blob, (1.0,) * 3, (0.0, 0.0, 0.0))
        down = resample_isotropic(v, 1.5, (32, 32, 32))
        up = resample_isotropic(down, 1.0, (48, 48, 48))
        err = np.abs(up.intensities - v.intensities).max()
        assert err < 0.02 * (v.intensities.max() - v.intensities.min())

    def test_bad_targets(self, small_volume):
        with pytest.raises(ConfigError):
            resample_isotropic(small_volume, 0.0)
        with pytest.raises(ConfigError):
            resample_isotropic(small_volume, 1.0, (0, 10, 10))


class TestNormalize:
    def test_affine_map_exact(self):
        vals = np.arange(101.0)[:, None, None] * np.ones((1, 3, 3))
        out = normalize_intensity(Volume3D(vals), 0.0, 100.0)
        assert np.allclose(out.intensities[:, 0, 0], np.arange(101) / 100.0, atol=1e-15)

    def test_constant_volume_degenerate(self):
        v = Volume3D(np.full((6, 6, 6), 3.0))
        with pytest.warns(DegenerateNormalizationWarning):
            out = normalize_intensity(v)
        assert np.all(out.intensities == 0.0)

    def test_full_range_attained(self, rng):
        v = Volume3D(rng.normal(0, 10, (20, 20, 20)))
        out = normalize_intensity(v, 1.0, 99.0)
        assert out.intensities.min() == 0.0
        assert out.intensities.max() == 1.0

    def test_monotone(self, rng):
        v = Volume3D(rng.normal(0, 10, (12, 12, 12)))
        out = normalize_intensity(v, 5.0, 95.0)
        flat_in = v.intensities.ravel()
        flat_out = out.intensities.ravel()
        order = np.argsort(flat_in, kind="stable")
        assert np.all(np.diff(flat_out[order]) >= 0)

    def test_bad_percentiles(self, small_volume):
        with pytest.raises(ConfigError):
            normalize_intensity(small_volume, 50.0, 50.0)
        with pytest.raises(ConfigError):
            normalize_intensity(small_volume, -1.0, 99.0)


class TestAdjustContrast:
    def test_gamma_one_is_identity(self, rng):
        v = Volume3D(rng.uniform(0, 1, (8, 8, 8)))
        out = adjust_contrast(v, 1.0)
        assert np.array_equal(out.intensities, v.intensities)

    def test_direct_value(self):
        v = Volume3D(np.full((2, 2, 2), 0.25))
        assert adjust_contrast(v, 2.0).intensities[0, 0, 0] == pytest.approx(0.0625, abs=1e-15)

    def test_endpoints_fixed(self, rng):
        arr = rng.uniform(0, 1, (6, 6, 6))
        arr[0, 0, 0] = 0.0
        arr[1, 1, 1] = 1.0
        for gamma in (0.3, 1.0, 2.7):
            out = adjust_contrast(Volume3D(arr), gamma)
            assert out.intensities[0, 0, 0] == 0.0
            assert out.intensities[1, 1, 1] == 1.0

    def test_rejects_out_of_range(self):
        with pytest.raises(RejectedInputError):
            adjust_contrast(Volume3D(np.full((2, 2, 2), 1.5)), 2.0)

    def test_order_preserving(self, rng):
        v = Volume3D(rng.uniform(0, 1, (10, 10, 10)))
        out = adjust_contrast(v, 0.7)
        order_in = np.argsort(v.intensities.ravel(), kind="stable")
        assert np.all(np.diff(out.intensities.ravel()[order_in]) >= 0)


class TestCoordinates:
    def test_origin_maps_to_zero(self, small_volume):
        c, inside = world_to_voxel(small_volume, WorldPoint(*small_volume.origin))
        assert np.allclose(c, 0.0) and inside

    def test_identity_scale(self):
        v = Volume3D(np.zeros((40, 40, 40)), (1.0,) * 3, (0.0, 0.0, 0.0))
        c, inside = world_to_voxel(v, WorldPoint(10.0, 20.0, 30.0))
        assert np.allclose(c, (10.0, 20.0, 30.0)) and inside

    def test_round_trip_1000_points(self, small_volume, rng):
        for _ in range(1000):
            p = WorldPoint(*rng.uniform(-100, 100, 3))
            c, _ = world_to_voxel(small_volume, p)
            back = voxel_to_world(small_volume, c)
            assert np.abs(np.asarray(back) - np.asarray(p)).max() < 1e-9

    def test_outside_flag(self, small_volume):
        _, inside = world_to_voxel(small_volume, WorldPoint(1e4, 0.0, 0.0))
        assert not inside


@settings(deadline=None, max_examples=25)
@given(
    gamma=st.floats(0.1, 5.0),
    lo=st.floats(0.0, 40.0),
    width=st.floats(10.0, 60.0),
)
def test_normalize_then_contrast_stays_in_unit_range(gamma, lo, width):
    arr = np.random.default_rng(0).normal(50, 20, (10, 10, 10))
    out = normalize_intensity(Volume3D(arr), lo, lo + width)
    out = adjust_contrast(out, gamma)
    assert out.intensities.min() >= 0.0
    assert out.intensities.max() <= 1.0

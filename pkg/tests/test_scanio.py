import gzip
import json
import struct

import numpy as np
import pytest

from cmbpipe.errors import (
    BadMagicError,
    ManifestError,
    NonFiniteDataError,
    ObliqueOrientationWarning,
    QuantizationOverflowError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
)
from cmbpipe.scanio import (
    Acquisition,
    ScanManifestEntry,
    read_manifest,
    read_mask,
    read_probability,
    read_volume,
    write_manifest,
    write_mask,
    write_probability,
    write_volume,
)
from cmbpipe.volume import LabelMask, ProbabilityVolume, Volume3D, WorldPoint


def make_volume(rng, dims=(12, 10, 14), spacing=(0.93, 0.93, 1.75), origin=(-5.0, 3.0, 0.0)):
    return Volume3D(rng.normal(100, 20, dims), spacing, origin)


class TestNiftiRoundTrip:
    def test_float32_round_trip(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path, "float32")
        back = read_volume(path)
        assert back.dims == v.dims
        assert np.allclose(back.spacing, v.spacing, atol=1e-6)
        assert np.allclose(back.origin, v.origin, atol=1e-5)
        assert np.allclose(back.intensities, v.intensities.astype(np.float32), atol=0)

    def test_gzip_round_trip(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii.gz"
        write_volume(v, path, "float32")
        assert path.read_bytes()[:2] == b"\x1f\x8b"
        back = read_volume(path)
        assert np.allclose(back.intensities, v.intensities.astype(np.float32), atol=0)

    def test_int16_quantization_step(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path, "int16")
        back = read_volume(path)
        assert np.abs(back.intensities - v.intensities).max() <= 0.5  # one quantization step

    def test_int16_overflow_rejected(self, tmp_path):
        v = Volume3D(np.full((4, 4, 4), 70000.0))
        with pytest.raises(QuantizationOverflowError):
            write_volume(v, tmp_path / "vol.nii", "int16")

    def test_uint8_mask_round_trip(self, rng, tmp_path):
        m = LabelMask((rng.uniform(0, 1, (9, 9, 9)) > 0.7).astype(np.uint8), (1.0,) * 3, (0.0, 0.0, 0.0))
        path = tmp_path / "mask.nii.gz"
        write_mask(m, path)
        back = read_mask(path)
        assert np.array_equal(back.labels, m.labels)

    def test_probability_round_trip_keeps_unit_range(self, rng, tmp_path):
        p = ProbabilityVolume(rng.uniform(0, 1, (8, 8, 8)).astype(np.float32))
        path = tmp_path / "prob.nii.gz"
        write_probability(p, path)
        back = read_probability(path)
        assert back.values.min() >= 0.0 and back.values.max() <= 1.0
        assert np.array_equal(back.values, p.values)


class TestNiftiHeaderHandling:
    def _raw_header_and_payload(self, path):
        blob = path.read_bytes()
        if blob[:2] == b"\x1f\x8b":
            blob = gzip.decompress(blob)
        return bytearray(blob)

    def test_bad_magic(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        blob = self._raw_header_and_payload(path)
        blob[344:348] = b"abc\x00"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError, match="magic"):
            read_volume(path)

    def test_pair_magic_unsupported(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        blob = self._raw_header_and_payload(path)
        blob[344:348] = b"ni1\x00"
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagicError, match="pair"):
            read_volume(path)

    def test_unsupported_datatype(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        blob = self._raw_header_and_payload(path)
        struct.pack_into("<h", blob, 70, 32)  # 64-bit complex
        path.write_bytes(bytes(blob))
        with pytest.raises(UnsupportedDatatypeError, match="datatype"):
            read_volume(path)

    def test_truncated_payload(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(TruncatedPayloadError, match="payload"):
            read_volume(path)

    def test_non_finite_payload(self, tmp_path, rng):
        v = make_volume(rng, dims=(4, 4, 4))
        path = tmp_path / "vol.nii"
        write_volume(v, path, "float32")
        blob = self._raw_header_and_payload(path)
        struct.pack_into("<f", blob, 352, np.nan)
        path.write_bytes(bytes(blob))
        with pytest.raises(NonFiniteDataError):
            read_volume(path)

    def test_pixdim_honored(self, tmp_path):
        # typical DS1-style SWI acquisition geometry
        v = Volume3D(np.zeros((6, 6, 6)), (0.93, 0.93, 1.75))
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        back = read_volume(path)
        assert np.allclose(back.spacing, (0.93, 0.93, 1.75), atol=1e-6)

    def test_scl_slope_inter_applied(self, rng, tmp_path):
        v = make_volume(rng, dims=(5, 5, 5))
        path = tmp_path / "vol.nii"
        write_volume(v, path, "float32")
        blob = self._raw_header_and_payload(path)
        struct.pack_into("<2f", blob, 112, 2.0, 10.0)
        path.write_bytes(bytes(blob))
        back = read_volume(path)
        assert np.allclose(back.intensities, v.intensities.astype(np.float32) * 2.0 + 10.0, atol=1e-4)

    def test_axis_permutation_and_flip_normalized(self, rng, tmp_path):
        # canonical volume, stored with axes permuted (z, x, y) and x flipped
        arr = rng.normal(0, 1, (6, 8, 10))
        stored = np.transpose(arr, (2, 0, 1))[:, ::-1, :]  # axis0=z, axis1=-x, axis2=y
        dims = stored.shape
        header = bytearray(348)
        struct.pack_into("<i", header, 0, 348)
        struct.pack_into("<8h", header, 40, 3, *dims, 1, 1, 1, 1)
        struct.pack_into("<h", header, 70, 16)
        struct.pack_into("<h", header, 72, 32)
        struct.pack_into("<8f", header, 76, 1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0)
        struct.pack_into("<f", header, 108, 352.0)
        struct.pack_into("<2h", header, 252, 0, 1)
        # world = R @ index + t ; data axis 0 -> +z, axis 1 -> -x, axis 2 -> +y
        srow = np.array(
            [
                [0.0, -1.0, 0.0, 5.0],
                [0.0, 0.0, 1.0, 0.0],
                [1.0, 0.0, 0.0, -2.0],
            ]
        )
        struct.pack_into("<12f", header, 280, *srow.ravel())
        struct.pack_into("<4s", header, 344, b"n+1\x00")
        payload = stored.astype("<f4").tobytes(order="F")
        path = tmp_path / "perm.nii"
        path.write_bytes(bytes(header) + b"\x00" * 4 + payload)

        back = read_volume(path)
        assert back.dims == (6, 8, 10)
        assert np.allclose(back.intensities, arr.astype(np.float32))
        # flipped x: origin moves to the low end of the x span
        assert back.origin == (5.0 - (6 - 1), 0.0, -2.0)

    def test_oblique_rotation_warns(self, rng, tmp_path):
        v = make_volume(rng, dims=(5, 5, 5))
        path = tmp_path / "vol.nii"
        write_volume(v, path)
        blob = self._raw_header_and_payload(path)
        theta = np.deg2rad(10.0)
        rot = np.array(
            [
                [np.cos(theta), -np.sin(theta), 0.0],
                [np.sin(theta), np.cos(theta), 0.0],
                [0.0, 0.0, 1.0],
            ]
        ) @ np.diag(v.spacing)
        srow = np.column_stack([rot, np.asarray(v.origin)])
        struct.pack_into("<12f", blob, 280, *srow.ravel())
        path.write_bytes(bytes(blob))
        with pytest.warns(ObliqueOrientationWarning):
            read_volume(path)


class TestRawFormat:
    def test_round_trip(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.raw"
        write_volume(v, path, "float32")
        assert (tmp_path / "vol.raw.hdr").exists()
        back = read_volume(path)
        assert back.dims == v.dims
        assert np.allclose(back.spacing, v.spacing)
        assert np.allclose(back.origin, v.origin)
        assert np.allclose(back.intensities, v.intensities.astype(np.float32), atol=0)

    def test_truncated(self, rng, tmp_path):
        v = make_volume(rng)
        path = tmp_path / "vol.raw"
        write_volume(v, path, "float32")
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(TruncatedPayloadError):
            read_volume(path)


def entry(scan_id="s1", subject="p1", centers=(), p_cmb=None):
    return ScanManifestEntry(
        scan_id=scan_id,
        subject_id=subject,
        dataset_tag="PHANTOM",
        path=f"{scan_id}.nii.gz",
        cmb_centers=tuple(WorldPoint(*c) for c in centers),
        p_cmb=p_cmb,
        acquisition=Acquisition(3.0, 20.0, 1.75, "SIM"),
    )


class TestManifest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("")
        assert read_manifest(path) == []

    def test_round_trip(self, tmp_path):
        entries = [entry("a", centers=[(1, 2, 3), (4, 5, 6), (7, 8, 9)], p_cmb=0.4), entry("b")]
        path = tmp_path / "manifest.jsonl"
        write_manifest(entries, path)
        back = read_manifest(path)
        assert back == entries
        assert len(back[0].cmb_centers) == 3
        assert back[0].cmb_centers[1] == WorldPoint(4.0, 5.0, 6.0)

    def test_p_cmb_out_of_range(self, tmp_path):
        rec = entry("a").to_json()
        rec["p_cmb"] = 1.5
        path = tmp_path / "manifest.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestError, match="line 1"):
            read_manifest(path)

    def test_duplicate_scan_id(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        write_manifest([entry("a")], path)
        with open(path, "a") as fh:
            fh.write(json.dumps(entry("a").to_json()) + "\n")
        with pytest.raises(ManifestError, match="line 2.*duplicate"):
            read_manifest(path)

    def test_error_names_line(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        good = json.dumps(entry("a").to_json())
        path.write_text(good + "\n" + "{not json}\n")
        with pytest.raises(ManifestError, match="line 2"):
            read_manifest(path)

    def test_bad_tag(self, tmp_path):
        rec = entry("a").to_json()
        rec["dataset_tag"] = "DS9"
        path = tmp_path / "manifest.jsonl"
        path.write_text(json.dumps(rec) + "\n")
        with pytest.raises(ManifestError, match="dataset_tag"):
            read_manifest(path)

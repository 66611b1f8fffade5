"""Volume and manifest I/O.

Two on-disk volume formats are supported:

* a NIfTI-1 subset: single ``.nii``/``.nii.gz`` files, magic ``n+1\\0``,
  datatypes uint8/int16/float32, honoring dim[0..4], datatype, bitpix,
  pixdim[1..3], vox_offset, scl_slope/scl_inter and the sform/qform
  permutation+sign part (residual oblique rotation is ignored with a
  warning — volumes are axis-aligned by design);
* a raw format: flat little-endian binary payload plus a ``<path>.hdr``
  text sidecar carrying dims, spacing, origin and dtype.

Dataset manifests are newline-delimited JSON records, one scan per line.
"""

from __future__ import annotations

import gzip
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ManifestError,
    NonFiniteDataError,
    ObliqueOrientationWarning,
    QuantizationOverflowError,
    TruncatedPayloadError,
    UnsupportedDatatypeError,
    VolumeLoadError,
)
from .volume import LabelMask, ProbabilityVolume, Volume3D, WorldPoint

HEADER_SIZE = 348
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"

# NIfTI-1 datatype codes in the supported subset.
DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
DTYPE_CODES = {"uint8": 2, "int16": 4, "float32": 16}
BITPIX = {2: 8, 4: 16, 16: 32}

DATASET_TAGS = ("DS1r", "DS1s", "DS2", "DS3", "DS3n", "PHANTOM", "OTHER")


# ---------------------------------------------------------------------------
# NIfTI-1 subset
# ---------------------------------------------------------------------------

def _read_bytes(path: str | Path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        rest = fh.read()
    raw = head + rest
    if head == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    a = float(np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d))))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _parse_nifti_header(blob: bytes, path: str):
    if len(blob) < HEADER_SIZE:
        raise TruncatedPayloadError(f"{path}: file shorter than the 348-byte header")
    magic = blob[344:348]
    if magic == MAGIC_PAIR:
        raise BadMagicError(f"{path}: magic 'ni1' (.hdr/.img pair) is not supported")
    if magic != MAGIC_SINGLE:
        raise BadMagicError(f"{path}: magic field is {magic!r}, expected {MAGIC_SINGLE!r}")

    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", blob, 0)[0] == HEADER_SIZE:
            break
    else:
        raise BadMagicError(f"{path}: sizeof_hdr is not 348 in either byte order")

    dim = struct.unpack_from(endian + "8h", blob, 40)
    datatype = struct.unpack_from(endian + "h", blob, 70)[0]
    pixdim = struct.unpack_from(endian + "8f", blob, 76)
    vox_offset = struct.unpack_from(endian + "f", blob, 108)[0]
    scl_slope, scl_inter = struct.unpack_from(endian + "2f", blob, 112)
    qform_code, sform_code = struct.unpack_from(endian + "2h", blob, 252)
    quatern = struct.unpack_from(endian + "6f", blob, 256)
    srow = np.array(struct.unpack_from(endian + "12f", blob, 280)).reshape(3, 4)

    ndim = dim[0]
    if ndim < 3 or ndim > 4 or (ndim == 4 and dim[4] != 1):
        raise VolumeLoadError(f"{path}: dim[0]={ndim} (dim[4]={dim[4]}); only 3D volumes are supported")
    dims = tuple(int(d) for d in dim[1:4])
    if any(d < 1 for d in dims):
        raise VolumeLoadError(f"{path}: dim[1..3]={dims} must be positive")
    spacing = tuple(float(p) for p in pixdim[1:4])
    if any(not np.isfinite(s) or s <= 0 for s in spacing):
        raise VolumeLoadError(f"{path}: pixdim[1..3]={spacing} must be positive")

    if datatype not in DTYPES:
        raise UnsupportedDatatypeError(f"{path}: datatype code {datatype} unsupported (allowed: 2, 4, 16)")

    if sform_code > 0:
        rot = srow[:, :3].astype(np.float64)
        trans = srow[:, 3].astype(np.float64)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        rot = _quaternion_rotation(*quatern[:3]) * np.array(spacing)
        rot[:, 2] *= qfac
        trans = np.asarray(quatern[3:6], dtype=np.float64)
    else:
        rot = np.diag(spacing).astype(np.float64)
        trans = np.zeros(3)

    return endian, dims, spacing, datatype, float(vox_offset), float(scl_slope), float(scl_inter), rot, trans


def _canonical_orientation(arr: np.ndarray, spacing, rot: np.ndarray, trans: np.ndarray, path: str):
    """Reorder/flip data axes so axis i runs along world axis i, increasing.

    Only the permutation+sign part of the affine is honored; a residual
    oblique rotation triggers a warning and is dropped.
    """
    norms = np.linalg.norm(rot, axis=0)
    if np.any(norms == 0):
        raise VolumeLoadError(f"{path}: srow/qform affine has a zero column")
    world_of_axis = [int(np.argmax(np.abs(rot[:, j]))) for j in range(3)]
    if sorted(world_of_axis) != [0, 1, 2]:
        raise VolumeLoadError(f"{path}: srow/qform affine does not define an axis permutation")

    cosines = [abs(rot[world_of_axis[j], j]) / norms[j] for j in range(3)]
    if min(cosines) < 1.0 - 1e-4:
        warnings.warn(
            f"{path}: oblique rotation in header affine ignored (axis cosines {cosines})",
            ObliqueOrientationWarning,
            stacklevel=3,
        )

    src = [world_of_axis.index(i) for i in range(3)]
    arr = np.transpose(arr, src)
    out_spacing, out_origin = [], []
    for i in range(3):
        j = src[i]
        sign = np.sign(rot[i, j])
        n = arr.shape[i]
        if sign < 0:
            arr = np.flip(arr, axis=i)
            out_origin.append(float(trans[i] + rot[i, j] * (n - 1)))
        else:
            out_origin.append(float(trans[i]))
        out_spacing.append(float(spacing[j]))
    return np.ascontiguousarray(arr), tuple(out_spacing), tuple(out_origin)


def _read_nifti(path: str | Path) -> Volume3D:
    blob = _read_bytes(path)
    (endian, dims, spacing, datatype, vox_offset, scl_slope, scl_inter, rot, trans) = _parse_nifti_header(
        blob, str(path)
    )
    dt = np.dtype(DTYPES[datatype]).newbyteorder(endian)
    offset = max(int(vox_offset), HEADER_SIZE)
    nbytes = int(np.prod(dims)) * dt.itemsize
    payload = blob[offset : offset + nbytes]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(payload)} bytes, dim/bitpix imply {nbytes} after vox_offset {offset}"
        )
    arr = np.frombuffer(payload, dtype=dt).reshape(dims, order="F").astype(np.float64)
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        arr = arr * scl_slope + scl_inter
    if not np.isfinite(arr).all():
        raise NonFiniteDataError(f"{path}: decoded intensities contain NaN/Inf")
    arr, spacing, origin = _canonical_orientation(arr, spacing, rot, trans, str(path))
    return Volume3D(arr, spacing, origin)


def _write_nifti(v: Volume3D, path: str | Path, datatype: str) -> None:
    code = DTYPE_CODES[datatype]
    dt = DTYPES[code]
    arr = v.intensities
    if datatype in ("uint8", "int16"):
        rounded = np.rint(arr)
        info = np.iinfo(dt)
        lo, hi = rounded.min(), rounded.max()
        if lo < info.min or hi > info.max:
            raise QuantizationOverflowError(
                f"{path}: values [{lo}, {hi}] do not fit {datatype} range [{info.min}, {info.max}]"
            )
        cast = rounded.astype(dt)
    else:
        cast = arr.astype(np.float32)

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, *v.dims, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, code)
    struct.pack_into("<h", header, 72, BITPIX[code])
    struct.pack_into("<8f", header, 76, 1.0, *v.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, 352.0)
    struct.pack_into("<2f", header, 112, 0.0, 0.0)  # scl unset
    struct.pack_into("<80s", header, 148, b"cmbpipe")
    struct.pack_into("<2h", header, 252, 0, 1)  # qform off, sform on
    srow = np.zeros((3, 4))
    srow[:, :3] = np.diag(v.spacing)
    srow[:, 3] = v.origin
    struct.pack_into("<12f", header, 280, *srow.ravel())
    struct.pack_into("<4s", header, 344, MAGIC_SINGLE)

    blob = bytes(header) + b"\x00" * 4 + cast.tobytes(order="F")
    if str(path).endswith(".gz"):
        # mtime pinned so identical volumes give byte-identical files
        with gzip.GzipFile(path, "wb", mtime=0) as fh:
            fh.write(blob)
    else:
        Path(path).write_bytes(blob)


# ---------------------------------------------------------------------------
# Raw format
# ---------------------------------------------------------------------------

def _raw_header_path(path: str | Path) -> Path:
    return Path(str(path) + ".hdr")


def _read_raw(path: str | Path) -> Volume3D:
    hdr_path = _raw_header_path(path)
    fields = {}
    for line in hdr_path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    for key in ("dims", "spacing", "origin", "dtype", "byteorder"):
        if key not in fields:
            raise VolumeLoadError(f"{hdr_path}: missing field '{key}'")
    if fields["byteorder"] != "little":
        raise VolumeLoadError(f"{hdr_path}: byteorder must be 'little', got '{fields['byteorder']}'")
    if fields["dtype"] not in DTYPE_CODES:
        raise UnsupportedDatatypeError(f"{hdr_path}: dtype '{fields['dtype']}' unsupported")
    dims = tuple(int(x) for x in fields["dims"].split())
    spacing = tuple(float(x) for x in fields["spacing"].split())
    origin = tuple(float(x) for x in fields["origin"].split())
    dt = np.dtype(DTYPES[DTYPE_CODES[fields["dtype"]]]).newbyteorder("<")
    payload = Path(path).read_bytes()
    nbytes = int(np.prod(dims)) * dt.itemsize
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"{path}: payload holds {len(payload)} bytes, header implies {nbytes}")
    arr = np.frombuffer(payload[:nbytes], dtype=dt).reshape(dims).astype(np.float64)
    if not np.isfinite(arr).all():
        raise NonFiniteDataError(f"{path}: decoded intensities contain NaN/Inf")
    return Volume3D(arr, spacing, origin)


def _write_raw(v: Volume3D, path: str | Path, datatype: str) -> None:
    dt = DTYPES[DTYPE_CODES[datatype]]
    arr = v.intensities
    if datatype in ("uint8", "int16"):
        rounded = np.rint(arr)
        info = np.iinfo(dt)
        if rounded.min() < info.min or rounded.max() > info.max:
            raise QuantizationOverflowError(f"{path}: values do not fit {datatype}")
        cast = rounded.astype(dt)
    else:
        cast = arr.astype(np.float32)
    header = "\n".join(
        [
            "dims: " + " ".join(str(d) for d in v.dims),
            "spacing: " + " ".join(repr(s) for s in v.spacing),
            "origin: " + " ".join(repr(o) for o in v.origin),
            f"dtype: {datatype}",
            "byteorder: little",
        ]
    )
    _raw_header_path(path).write_text(header + "\n")
    Path(path).write_bytes(cast.astype(np.dtype(dt).newbyteorder("<")).tobytes())


# ---------------------------------------------------------------------------
# Public volume API
# ---------------------------------------------------------------------------

def read_volume(path: str | Path) -> Volume3D:
    """Load a volume, dispatching on content (NIfTI magic / raw sidecar)."""
    path = Path(path)
    if not path.exists():
        raise VolumeLoadError(f"{path}: no such file")
    if _raw_header_path(path).exists() and not str(path).endswith((".nii", ".nii.gz")):
        return _read_raw(path)
    return _read_nifti(path)


def write_volume(v: Volume3D, path: str | Path, datatype: str = "float32") -> None:
    """Write a volume; ``.raw`` paths use the raw format, everything else NIfTI-1.

    Integer datatypes round to the nearest step and refuse to wrap:
    out-of-range values raise :class:`QuantizationOverflowError`.
    """
    if datatype not in DTYPE_CODES:
        raise UnsupportedDatatypeError(f"datatype '{datatype}' unsupported (allowed: {sorted(DTYPE_CODES)})")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if str(path).endswith(".raw"):
        _write_raw(v, path, datatype)
    else:
        _write_nifti(v, path, datatype)


def read_mask(path: str | Path) -> LabelMask:
    v = read_volume(path)
    return LabelMask(v.intensities, v.spacing, v.origin)


def write_mask(m: LabelMask, path: str | Path) -> None:
    write_volume(Volume3D(m.labels, m.spacing, m.origin), path, datatype="uint8")


def read_probability(path: str | Path) -> ProbabilityVolume:
    v = read_volume(path)
    return ProbabilityVolume(v.intensities, v.spacing, v.origin)


def write_probability(p: ProbabilityVolume, path: str | Path) -> None:
    write_volume(Volume3D(p.values, p.spacing, p.origin), path, datatype="float32")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Acquisition:
    field_strength_tesla: float
    echo_time_ms: float
    slice_thickness_mm: float
    scanner_model: str


@dataclass(frozen=True)
class ScanManifestEntry:
    scan_id: str
    subject_id: str
    dataset_tag: str
    path: str
    cmb_centers: tuple[WorldPoint, ...] = ()
    p_cmb: float | None = None
    acquisition: Acquisition = field(
        default_factory=lambda: Acquisition(0.0, 0.0, 0.0, "unknown")
    )

    def to_json(self) -> dict:
        rec = {
            "scan_id": self.scan_id,
            "subject_id": self.subject_id,
            "dataset_tag": self.dataset_tag,
            "path": self.path,
            "cmb_centers": [[c.x, c.y, c.z] for c in self.cmb_centers],
            "acquisition": {
                "field_strength_tesla": self.acquisition.field_strength_tesla,
                "echo_time_ms": self.acquisition.echo_time_ms,
                "slice_thickness_mm": self.acquisition.slice_thickness_mm,
                "scanner_model": self.acquisition.scanner_model,
            },
        }
        if self.p_cmb is not None:
            rec["p_cmb"] = self.p_cmb
        return rec


def _entry_from_json(rec: dict, lineno: int) -> ScanManifestEntry:
    def fail(msg: str):
        raise ManifestError(f"line {lineno}: {msg}")

    if not isinstance(rec, dict):
        fail("record is not an object")
    for key in ("scan_id", "subject_id", "dataset_tag", "path", "cmb_centers", "acquisition"):
        if key not in rec:
            fail(f"missing key '{key}'")
    unknown = set(rec) - {"scan_id", "subject_id", "dataset_tag", "path", "cmb_centers", "p_cmb", "acquisition"}
    if unknown:
        fail(f"unknown keys {sorted(unknown)}")
    if rec["dataset_tag"] not in DATASET_TAGS:
        fail(f"dataset_tag '{rec['dataset_tag']}' not in {DATASET_TAGS}")
    centers = []
    for c in rec["cmb_centers"]:
        if not isinstance(c, (list, tuple)) or len(c) != 3:
            fail(f"cmb_center {c!r} is not an [x, y, z] triple")
        centers.append(WorldPoint(*(float(x) for x in c)))
    p_cmb = rec.get("p_cmb")
    if p_cmb is not None:
        p_cmb = float(p_cmb)
        if not (0.0 <= p_cmb <= 1.0):
            fail(f"p_cmb {p_cmb} outside [0, 1]")
    acq = rec["acquisition"]
    if not isinstance(acq, dict):
        fail("acquisition is not an object")
    try:
        acquisition = Acquisition(
            field_strength_tesla=float(acq["field_strength_tesla"]),
            echo_time_ms=float(acq["echo_time_ms"]),
            slice_thickness_mm=float(acq["slice_thickness_mm"]),
            scanner_model=str(acq["scanner_model"]),
        )
    except KeyError as exc:
        fail(f"acquisition missing key {exc}")
    return ScanManifestEntry(
        scan_id=str(rec["scan_id"]),
        subject_id=str(rec["subject_id"]),
        dataset_tag=str(rec["dataset_tag"]),
        path=str(rec["path"]),
        cmb_centers=tuple(centers),
        p_cmb=p_cmb,
        acquisition=acquisition,
    )


def read_manifest(path: str | Path) -> list[ScanManifestEntry]:
    """Parse a JSON-lines manifest; schema violations carry the line number."""
    entries: list[ScanManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            entry = _entry_from_json(rec, lineno)
            if entry.scan_id in seen:
                raise ManifestError(f"line {lineno}: duplicate scan_id '{entry.scan_id}'")
            seen.add(entry.scan_id)
            entries.append(entry)
    return entries


def write_manifest(entries, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")

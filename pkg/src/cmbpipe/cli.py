"""Command-line front end wiring the modules into reproducible batch runs.

One subcommand per pipeline stage: phantom, mask-synth, augment, segment,
fuse, detect, eval, compare-groups, sweep, partition. Parameters come from
built-in defaults, overlaid by a JSON run-config file (one section per
command), overlaid by explicit flags. Every run writes a run-record
(resolved config + content hashes of inputs and outputs) under the output
directory; with a fixed seed, reruns are byte-identical apart from the
record's timestamp.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import annotation, augment, detect, phantom, scanio, stats, triplanar, volume
from .errors import CMBPipeError, ConfigError, DataError
from .segmenter import (
    ExternalConfig,
    ReferenceConfig,
    SegmenterConfig,
    OracleSegmenter,
    ReferenceSegmenter,
    segmenters_from_config,
)
from .triplanar import VIEWS

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we map usage errors to 1
        raise _UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_record(out_dir: Path, command: str, params: dict, inputs, outputs) -> None:
    record = {
        "command": command,
        "params": params,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs if Path(p).is_file()},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"run_record_{command.replace('-', '_')}.json", "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config(path: str | None, command: str) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    section = cfg.get(command, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section '{command}' must be an object")
    merged = {k: v for k, v in cfg.items() if not isinstance(v, dict) or k == "common"}
    merged.pop("common", None)
    merged.update(cfg.get("common", {}))
    merged.update(section)
    return merged


def _resolve(args: argparse.Namespace, defaults: dict, command: str) -> dict:
    """defaults <- config file section <- explicit CLI flags."""
    cfg = _load_config(getattr(args, "config", None), command)
    resolved = dict(defaults)
    for key, value in cfg.items():
        if key in resolved:
            resolved[key] = value
    for key in defaults:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            resolved[key] = cli_value
    return resolved


def _jobs(params: dict) -> int:
    jobs = params.get("jobs")
    if jobs is None:
        jobs = int(os.environ.get("CMBPIPE_JOBS", "1"))
    jobs = int(jobs)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    return jobs


def _entry_volume_path(entry: scanio.ScanManifestEntry, manifest_path: str) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _read_detections_file(path: str) -> list[list[detect.DetectedCMB]]:
    """Per-scan detection lists from a `detect` output file."""
    per_scan = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                dets = [
                    detect.DetectedCMB(
                        id=int(d["id"]),
                        centroid_mm=volume.WorldPoint(*d["centroid_mm"]),
                        volume_mm3=float(d["volume_mm3"]),
                        voxel_count=int(d["voxel_count"]),
                        bbox=(
                            volume.VoxelIndex(*d["bbox"][0]),
                            volume.VoxelIndex(*d["bbox"][1]),
                        ),
                    )
                    for d in rec["detections"]
                ]
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path} line {lineno}: bad detections record ({exc})") from exc
            per_scan.append(dets)
    return per_scan


def _det_to_json(scan_id: str, dets) -> dict:
    return {
        "scan_id": scan_id,
        "detections": [
            {
                "id": d.id,
                "centroid_mm": [d.centroid_mm.x, d.centroid_mm.y, d.centroid_mm.z],
                "volume_mm3": d.volume_mm3,
                "voxel_count": d.voxel_count,
                "bbox": [list(d.bbox[0]), list(d.bbox[1])],
            }
            for d in dets
        ],
    }


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

PHANTOM_DEFAULTS = {
    "out": None,
    "count": 5,
    "dims": 64,
    "spacing": 1.0,
    "n_cmbs_min": 1,
    "n_cmbs_max": 10,
    "diameter_min": 2.0,
    "diameter_max": 10.0,
    "contrast_min": 0.5,
    "contrast_max": 0.9,
    "vessels": 0,
    "calcifications": 0,
    "base": 100.0,
    "smooth_amplitude": 2.0,
    "noise_sigma": 2.0,
    "seed": 0,
}


def cmd_phantom(args) -> int:
    params = _resolve(args, PHANTOM_DEFAULTS, "phantom")
    if not params["out"]:
        raise ConfigError("phantom: --out is required")
    out = Path(params["out"])
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "gt_masks").mkdir(parents=True, exist_ok=True)
    entries, outputs = [], []
    for idx in range(int(params["count"])):
        spec = phantom.random_phantom_spec(
            seed=int(params["seed"]) + idx,
            dims=(int(params["dims"]),) * 3,
            spacing=float(params["spacing"]),
            n_cmbs_range=(int(params["n_cmbs_min"]), int(params["n_cmbs_max"])),
            diameter_range=(float(params["diameter_min"]), float(params["diameter_max"])),
            contrast_range=(float(params["contrast_min"]), float(params["contrast_max"])),
            n_vessels=int(params["vessels"]),
            n_calcifications=int(params["calcifications"]),
            background=phantom.BackgroundSpec(
                base=float(params["base"]),
                smooth_amplitude=float(params["smooth_amplitude"]),
                noise_sigma=float(params["noise_sigma"]),
            ),
        )
        scan_id = f"phantom-{idx:04d}"
        vol, gt, entry = phantom.generate_phantom(spec, scan_id=scan_id, path=f"volumes/{scan_id}.nii.gz")
        scanio.write_volume(vol, out / "volumes" / f"{scan_id}.nii.gz")
        scanio.write_mask(gt, out / "gt_masks" / f"{scan_id}.nii.gz")
        outputs += [out / "volumes" / f"{scan_id}.nii.gz", out / "gt_masks" / f"{scan_id}.nii.gz"]
        entries.append(entry)
    manifest_path = out / "manifest.jsonl"
    scanio.write_manifest(entries, manifest_path)
    outputs.append(manifest_path)
    _write_run_record(out, "phantom", params, [], outputs)
    print(f"phantom: wrote {len(entries)} phantoms under {out}")
    return EXIT_OK


MASK_SYNTH_DEFAULTS = {
    "manifest": None,
    "out": None,
    "alpha_threshold": annotation.DEFAULT_ALPHA_THRESHOLD,
    "alpha_by_tag": "{}",
    "patch_halfwidth_mm": annotation.DEFAULT_PATCH_HALFWIDTH_MM,
    "snap_radius_mm": annotation.SNAP_RADIUS_MM,
    "shell_inner_mm": annotation.SHELL_INNER_MM,
    "shell_outer_mm": annotation.SHELL_OUTER_MM,
}


def cmd_mask_synth(args) -> int:
    params = _resolve(args, MASK_SYNTH_DEFAULTS, "mask-synth")
    if not params["manifest"] or not params["out"]:
        raise ConfigError("mask-synth: --manifest and --out are required")
    by_tag = json.loads(params["alpha_by_tag"]) if isinstance(params["alpha_by_tag"], str) else params["alpha_by_tag"]
    out = Path(params["out"])
    (out / "synth_masks").mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    outputs = []
    for entry in entries:
        vol = scanio.read_volume(_entry_volume_path(entry, params["manifest"]))
        threshold = float(by_tag.get(entry.dataset_tag, params["alpha_threshold"]))
        annotations = [
            annotation.CMBAnnotation(c, threshold, float(params["patch_halfwidth_mm"]))
            for c in entry.cmb_centers
        ]
        mask = annotation.synthesize_mask(
            vol,
            annotations,
            snap_radius_mm=float(params["snap_radius_mm"]),
            shell_inner_mm=float(params["shell_inner_mm"]),
            shell_outer_mm=float(params["shell_outer_mm"]),
        )
        path = out / "synth_masks" / f"{entry.scan_id}.nii.gz"
        scanio.write_mask(mask, path)
        outputs.append(path)
    _write_run_record(out, "mask-synth", params, [params["manifest"]], outputs)
    print(f"mask-synth: wrote {len(outputs)} masks under {out / 'synth_masks'}")
    return EXIT_OK


AUGMENT_DEFAULTS = {
    "manifest": None,
    "out": None,
    "masks_dir": None,
    "spec": None,
    "master_seed": None,
    "jobs": None,
}


def cmd_augment(args) -> int:
    params = _resolve(args, AUGMENT_DEFAULTS, "augment")
    if not params["manifest"] or not params["out"] or not params["masks_dir"]:
        raise ConfigError("augment: --manifest, --masks-dir and --out are required")
    if params["spec"]:
        with open(params["spec"]) as fh:
            spec = augment.AugmentSpec.from_json(json.load(fh))
    else:
        spec = augment.AugmentSpec()
    if params["master_seed"] is not None:
        spec = augment.AugmentSpec.from_json({**spec.to_json(), "master_seed": int(params["master_seed"])})
    out = Path(params["out"])
    for sub in ("aug_volumes", "aug_masks", "aug_params"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    jobs = _jobs(params)

    def one(entry):
        vol = scanio.read_volume(_entry_volume_path(entry, params["manifest"]))
        mask = scanio.read_mask(Path(params["masks_dir"]) / f"{entry.scan_id}.nii.gz")
        aug_v, aug_m, record = augment.apply_augmentation(vol, mask, spec, entry.scan_id)
        scanio.write_volume(aug_v, out / "aug_volumes" / f"{entry.scan_id}.nii.gz")
        scanio.write_mask(aug_m, out / "aug_masks" / f"{entry.scan_id}.nii.gz")
        with open(out / "aug_params" / f"{entry.scan_id}.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [
            out / "aug_volumes" / f"{entry.scan_id}.nii.gz",
            out / "aug_masks" / f"{entry.scan_id}.nii.gz",
            out / "aug_params" / f"{entry.scan_id}.json",
        ]

    outputs = []
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for paths in pool.map(one, entries):
                outputs += paths
    else:
        for entry in entries:
            outputs += one(entry)
    _write_run_record(out, "augment", {**params, "augment_spec": spec.to_json()}, [params["manifest"]], outputs)
    print(f"augment: processed {len(entries)} scans under {out}")
    return EXIT_OK


SEGMENT_DEFAULTS = {
    "manifest": None,
    "out": None,
    "segmenter": "reference",
    "gt_dir": None,
    "corruption_rate": 0.0,
    "oracle_seed": 0,
    "scale_min_mm": 1.0,
    "scale_max_mm": 4.0,
    "darkness_weight": None,
    "symmetry_weight": None,
    "logistic_gain": None,
    "score_offset": None,
    "prob_dir": None,
    "lo_pct": 1.0,
    "hi_pct": 99.0,
    "gamma": 1.0,
    "target_dims": 256,
    "target_spacing": 1.0,
    "jobs": None,
}


def _canonicalize(vol: volume.Volume3D, params: dict) -> volume.Volume3D:
    if len(set(vol.dims)) == 1 and len(set(vol.spacing)) == 1:
        return vol
    return volume.resample_isotropic(
        vol, float(params["target_spacing"]), (int(params["target_dims"]),) * 3
    )


def cmd_segment(args) -> int:
    params = _resolve(args, SEGMENT_DEFAULTS, "segment")
    if not params["manifest"] or not params["out"]:
        raise ConfigError("segment: --manifest and --out are required")
    kind = params["segmenter"]
    out = Path(params["out"])
    (out / "prob").mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    jobs = _jobs(params)
    ref_kwargs = {}
    for key in ("darkness_weight", "symmetry_weight", "logistic_gain", "score_offset"):
        if params[key] is not None:
            ref_kwargs[key] = float(params[key])

    outputs = []
    for entry in entries:
        vol = _canonicalize(scanio.read_volume(_entry_volume_path(entry, params["manifest"])), params)
        if kind == "oracle":
            if not params["gt_dir"]:
                raise ConfigError("segment: --gt-dir is required for the oracle segmenter")
            gt = scanio.read_mask(Path(params["gt_dir"]) / f"{entry.scan_id}.nii.gz")
            seg = OracleSegmenter(gt, float(params["corruption_rate"]), int(params["oracle_seed"]))
            segmenters = {view: seg for view in VIEWS}
        elif kind == "reference":
            vol = volume.normalize_intensity(vol, float(params["lo_pct"]), float(params["hi_pct"]))
            if float(params["gamma"]) != 1.0:
                vol = volume.adjust_contrast(vol, float(params["gamma"]))
            cfg = ReferenceConfig(
                scale_min_mm=float(params["scale_min_mm"]),
                scale_max_mm=float(params["scale_max_mm"]),
                pixel_spacing_mm=float(vol.spacing[0]),
                **ref_kwargs,
            )
            seg = ReferenceSegmenter(cfg)
            segmenters = {view: seg for view in VIEWS}
        elif kind == "external":
            if not params["prob_dir"]:
                raise ConfigError("segment: --prob-dir is required for the external segmenter")
            cfg = SegmenterConfig(
                kind="external",
                external=ExternalConfig(
                    axial_path=str(Path(params["prob_dir"]) / f"{entry.scan_id}_axial.nii.gz"),
                    sagittal_path=str(Path(params["prob_dir"]) / f"{entry.scan_id}_sagittal.nii.gz"),
                    coronal_path=str(Path(params["prob_dir"]) / f"{entry.scan_id}_coronal.nii.gz"),
                ),
            )
            segmenters = segmenters_from_config(cfg)
        else:
            raise ConfigError(f"segment: unknown segmenter kind '{kind}'")
        probs = triplanar.segment_volume(vol, segmenters, jobs=jobs)
        for view in VIEWS:
            path = out / "prob" / f"{entry.scan_id}_{view}.nii.gz"
            scanio.write_probability(probs[view], path)
            outputs.append(path)
    _write_run_record(out, "segment", params, [params["manifest"]], outputs)
    print(f"segment: wrote {len(outputs)} probability volumes under {out / 'prob'}")
    return EXIT_OK


FUSE_DEFAULTS = {
    "manifest": None,
    "prob_dir": None,
    "out": None,
    "tau": 0.125,
}


def cmd_fuse(args) -> int:
    params = _resolve(args, FUSE_DEFAULTS, "fuse")
    if not params["manifest"] or not params["prob_dir"] or not params["out"]:
        raise ConfigError("fuse: --manifest, --prob-dir and --out are required")
    out = Path(params["out"])
    (out / "fused").mkdir(parents=True, exist_ok=True)
    (out / "pred_masks").mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    outputs = []
    for entry in entries:
        probs = {
            view: scanio.read_probability(Path(params["prob_dir"]) / f"{entry.scan_id}_{view}.nii.gz")
            for view in VIEWS
        }
        fused = triplanar.fuse_views(probs["axial"], probs["sagittal"], probs["coronal"])
        mask = triplanar.binarize_fused(fused, float(params["tau"]))
        fused_path = out / "fused" / f"{entry.scan_id}.nii.gz"
        mask_path = out / "pred_masks" / f"{entry.scan_id}.nii.gz"
        scanio.write_probability(fused, fused_path)
        scanio.write_mask(mask, mask_path)
        outputs += [fused_path, mask_path]
    _write_run_record(out, "fuse", params, [params["manifest"]], outputs)
    print(f"fuse: wrote fused volumes and masks for {len(entries)} scans under {out}")
    return EXIT_OK


DETECT_DEFAULTS = {
    "manifest": None,
    "masks_dir": None,
    "out": None,
    "connectivity": 26,
    "min_size": 0.0,
}


def cmd_detect(args) -> int:
    params = _resolve(args, DETECT_DEFAULTS, "detect")
    if not params["manifest"] or not params["masks_dir"] or not params["out"]:
        raise ConfigError("detect: --manifest, --masks-dir and --out are required")
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    det_path = out / "detections.jsonl"
    with open(det_path, "w") as fh:
        for entry in entries:
            mask = scanio.read_mask(Path(params["masks_dir"]) / f"{entry.scan_id}.nii.gz")
            dets = detect.connected_components(mask, int(params["connectivity"]))
            dets = detect.filter_by_size(dets, float(params["min_size"]))
            fh.write(json.dumps(_det_to_json(entry.scan_id, dets), sort_keys=True) + "\n")
    _write_run_record(out, "detect", params, [params["manifest"]], [det_path])
    print(f"detect: wrote detections for {len(entries)} scans to {det_path}")
    return EXIT_OK


EVAL_DEFAULTS = {
    "manifest": None,
    "pred_dir": None,
    "gt_dir": None,
    "out": None,
    "connectivity": 26,
    "min_size": 0.0,
    "match_dist": detect.DEFAULT_MATCH_DISTANCE_MM,
}


def cmd_eval(args) -> int:
    params = _resolve(args, EVAL_DEFAULTS, "eval")
    for key in ("manifest", "pred_dir", "gt_dir", "out"):
        if not params[key]:
            raise ConfigError(f"eval: --{key.replace('_', '-')} is required")
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    entries = scanio.read_manifest(params["manifest"])
    per_scan, tags = [], []
    with open(out / "per_scan_metrics.jsonl", "w") as fh:
        for entry in entries:
            pred = scanio.read_mask(Path(params["pred_dir"]) / f"{entry.scan_id}.nii.gz")
            gt = scanio.read_mask(Path(params["gt_dir"]) / f"{entry.scan_id}.nii.gz")
            metrics, _, _ = detect.evaluate_scan(
                pred,
                gt,
                connectivity=int(params["connectivity"]),
                min_volume_mm3=float(params["min_size"]),
                max_dist_mm=float(params["match_dist"]),
            )
            per_scan.append(metrics)
            tags.append(entry.dataset_tag)
            fh.write(
                json.dumps(
                    {
                        "scan_id": entry.scan_id,
                        "dataset": entry.dataset_tag,
                        "tp": metrics.tp,
                        "fp": metrics.fp,
                        "fn": metrics.fn,
                        "dsc": metrics.dsc,
                        "sensitivity": metrics.sensitivity,
                        "precision": metrics.precision,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    rows = detect.aggregate_metrics(per_scan, tags)
    table = detect.format_metrics_table(rows)
    (out / "metrics_table.txt").write_text(table + "\n")
    with open(out / "metrics_rows.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
    print(table)
    _write_run_record(
        out,
        "eval",
        params,
        [params["manifest"]],
        [out / "per_scan_metrics.jsonl", out / "metrics_table.txt", out / "metrics_rows.jsonl"],
    )
    return EXIT_OK


COMPARE_DEFAULTS = {
    "detections_a": None,
    "detections_b": None,
    "out": None,
    "size_filter": stats.DEFAULT_SIZE_FILTER_MM3,
    "illness_threshold": stats.DEFAULT_ILLNESS_THRESHOLD,
    "alternative": "two_sided",
    "zero_method": "drop",
}


def cmd_compare_groups(args) -> int:
    params = _resolve(args, COMPARE_DEFAULTS, "compare-groups")
    for key in ("detections_a", "detections_b", "out"):
        if not params[key]:
            raise ConfigError(f"compare-groups: --{key.replace('_', '-')} is required")
    group_a = _read_detections_file(params["detections_a"])
    group_b = _read_detections_file(params["detections_b"])
    comparison = stats.compare_groups(
        group_a,
        group_b,
        size_filter_mm3=float(params["size_filter"]),
        illness_threshold=int(params["illness_threshold"]),
        alternative=params["alternative"],
        zero_method=params["zero_method"],
    )
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "group_comparison.json", "w") as fh:
        json.dump(comparison.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    wp = "NA" if comparison.wilcoxon_p is None else f"{comparison.wilcoxon_p:.6f}"
    print(
        f"mean CMBs/scan: group A {comparison.mean_count_a:.2f}, group B {comparison.mean_count_b:.2f}\n"
        f"Wilcoxon signed-rank p = {wp}\n"
        f"contingency (>= {comparison.illness_threshold}): {comparison.contingency.rows()}\n"
        f"Fisher exact p = {comparison.fisher_p:.6f}"
    )
    _write_run_record(
        out,
        "compare-groups",
        params,
        [params["detections_a"], params["detections_b"]],
        [out / "group_comparison.json"],
    )
    return EXIT_OK


SWEEP_DEFAULTS = {
    "detections_a": None,
    "detections_b": None,
    "out": None,
    "thresholds": "0,1,2,3,4.2,5,7,10,15,20",
    "illness_threshold": stats.DEFAULT_ILLNESS_THRESHOLD,
}


def cmd_sweep(args) -> int:
    params = _resolve(args, SWEEP_DEFAULTS, "sweep")
    for key in ("detections_a", "detections_b", "out"):
        if not params[key]:
            raise ConfigError(f"sweep: --{key.replace('_', '-')} is required")
    if isinstance(params["thresholds"], str):
        thresholds = [float(t) for t in params["thresholds"].split(",") if t.strip()]
    else:
        thresholds = [float(t) for t in params["thresholds"]]
    group_a = _read_detections_file(params["detections_a"])
    group_b = _read_detections_file(params["detections_b"])
    rows = stats.size_sweep(group_a, group_b, thresholds, int(params["illness_threshold"]))
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    table = stats.format_sweep_table(rows)
    (out / "size_sweep.txt").write_text(table + "\n")
    with open(out / "size_sweep.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row.to_json(), sort_keys=True) + "\n")
    print(table)
    _write_run_record(
        out,
        "sweep",
        params,
        [params["detections_a"], params["detections_b"]],
        [out / "size_sweep.txt", out / "size_sweep.jsonl"],
    )
    return EXIT_OK


PARTITION_DEFAULTS = {
    "manifest": None,
    "out": None,
    "seed": 0,
    "fractions": "0.7,0.1,0.2",
}


def cmd_partition(args) -> int:
    params = _resolve(args, PARTITION_DEFAULTS, "partition")
    if not params["manifest"] or not params["out"]:
        raise ConfigError("partition: --manifest and --out are required")
    entries = scanio.read_manifest(params["manifest"])
    if isinstance(params["fractions"], str):
        fractions = tuple(float(f) for f in params["fractions"].split(","))
    else:
        fractions = tuple(float(f) for f in params["fractions"])
    subjects = sorted({e.subject_id for e in entries})
    train, val, test = annotation.partition_subjects(subjects, int(params["seed"]), fractions)
    out = Path(params["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, split in (("train", train), ("validation", val), ("test", test)):
        ids_path = out / f"{name}_subjects.txt"
        ids_path.write_text("".join(s + "\n" for s in sorted(split)))
        scanio.write_manifest([e for e in entries if e.subject_id in split], out / f"{name}_manifest.jsonl")
        outputs += [ids_path, out / f"{name}_manifest.jsonl"]
    _write_run_record(out, "partition", params, [params["manifest"]], outputs)
    print(
        f"partition: {len(train)} train / {len(val)} validation / {len(test)} test subjects "
        f"({len(entries)} scans) under {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run-config file; flags override its values")
    sub.add_argument("--out", help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="cmbpipe", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("phantom", help="generate synthetic phantoms with ground truth")
    _add_common(p)
    for flag in ("count", "dims", "vessels", "calcifications", "seed", "n-cmbs-min", "n-cmbs-max"):
        p.add_argument(f"--{flag}", type=int, dest=flag.replace("-", "_"))
    for flag in (
        "spacing",
        "diameter-min",
        "diameter-max",
        "contrast-min",
        "contrast-max",
        "base",
        "smooth-amplitude",
        "noise-sigma",
    ):
        p.add_argument(f"--{flag}", type=float, dest=flag.replace("-", "_"))
    p.set_defaults(func=cmd_phantom)

    p = subs.add_parser("mask-synth", help="synthesize volumetric masks from point annotations")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--alpha-threshold", type=float, dest="alpha_threshold")
    p.add_argument("--alpha-by-tag", dest="alpha_by_tag", help='JSON map tag -> threshold, e.g. \'{"DS2": 0.52}\'')
    p.add_argument("--patch-halfwidth-mm", type=float, dest="patch_halfwidth_mm")
    p.add_argument("--snap-radius-mm", type=float, dest="snap_radius_mm")
    p.add_argument("--shell-inner-mm", type=float, dest="shell_inner_mm")
    p.add_argument("--shell-outer-mm", type=float, dest="shell_outer_mm")
    p.set_defaults(func=cmd_mask_synth)

    p = subs.add_parser("augment", help="apply the MRI augmentation stack to volumes and masks")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--masks-dir", dest="masks_dir")
    p.add_argument("--spec", help="AugmentSpec JSON file")
    p.add_argument("--master-seed", type=int, dest="master_seed")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_augment)

    p = subs.add_parser("segment", help="per-view slice segmentation to probability volumes")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--segmenter", choices=("oracle", "reference", "external"))
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--corruption-rate", type=float, dest="corruption_rate")
    p.add_argument("--oracle-seed", type=int, dest="oracle_seed")
    p.add_argument("--scale-min-mm", type=float, dest="scale_min_mm")
    p.add_argument("--scale-max-mm", type=float, dest="scale_max_mm")
    p.add_argument("--darkness-weight", type=float, dest="darkness_weight")
    p.add_argument("--symmetry-weight", type=float, dest="symmetry_weight")
    p.add_argument("--logistic-gain", type=float, dest="logistic_gain")
    p.add_argument("--score-offset", type=float, dest="score_offset")
    p.add_argument("--prob-dir", dest="prob_dir")
    p.add_argument("--lo-pct", type=float, dest="lo_pct")
    p.add_argument("--hi-pct", type=float, dest="hi_pct")
    p.add_argument("--gamma", type=float)
    p.add_argument("--target-dims", type=int, dest="target_dims")
    p.add_argument("--target-spacing", type=float, dest="target_spacing")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_segment)

    p = subs.add_parser("fuse", help="multiply per-view probabilities and binarize")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--prob-dir", dest="prob_dir")
    p.add_argument("--tau", type=float)
    p.set_defaults(func=cmd_fuse)

    p = subs.add_parser("detect", help="connected components + size filter over binary masks")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--masks-dir", dest="masks_dir")
    p.add_argument("--connectivity", type=int, choices=(6, 26))
    p.add_argument("--min-size", type=float, dest="min_size")
    p.set_defaults(func=cmd_detect)

    p = subs.add_parser("eval", help="per-scan and per-dataset detection metrics")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--pred-dir", dest="pred_dir")
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--connectivity", type=int, choices=(6, 26))
    p.add_argument("--min-size", type=float, dest="min_size")
    p.add_argument("--match-dist", type=float, dest="match_dist")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("compare-groups", help="Wilcoxon + Fisher group analysis of detection counts")
    _add_common(p)
    p.add_argument("--detections-a", dest="detections_a")
    p.add_argument("--detections-b", dest="detections_b")
    p.add_argument("--size-filter", type=float, dest="size_filter")
    p.add_argument("--illness-threshold", type=int, dest="illness_threshold")
    p.add_argument("--alternative", choices=stats.ALTERNATIVES)
    p.add_argument("--zero-method", choices=("drop", "pratt"), dest="zero_method")
    p.set_defaults(func=cmd_compare_groups)

    p = subs.add_parser("sweep", help="group comparison across size-filter thresholds")
    _add_common(p)
    p.add_argument("--detections-a", dest="detections_a")
    p.add_argument("--detections-b", dest="detections_b")
    p.add_argument("--thresholds", help="comma-separated mm^3 thresholds, ascending")
    p.add_argument("--illness-threshold", type=int, dest="illness_threshold")
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("partition", help="subject-level train/validation/test split")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--fractions", help="comma-separated fractions summing to 1, e.g. 0.7,0.1,0.2")
    p.set_defaults(func=cmd_partition)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CMBPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - the CLI boundary maps everything to exit 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

"""Test-split evaluation report: complexity map volumes, delimited tables,
a plain-text summary with fixed field names, and rendered figures.

Per test scan the pipeline writes variance/error/cov map volumes and a
mid-slice figure; pooled across scans it reports the per-patch calibration
correlation and the per-region complexity statistics, including a
one-sided rank test that crossing regions score above bundle interiors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .checkpoints import read_checkpoint
from .config import RunConfig
from .errors import ContractError
from .evaluation import (
    CalibrationReport,
    ComplexityMap,
    PatchRecord,
    aggregate_maps,
    calibration,
    evaluate_volume,
    region_cov_values,
    region_report,
)
from .fields import VectorVolume, default_threshold, white_matter_mask
from .model import InpaintingGan
from .phantoms import LABEL_BUNDLE, LABEL_CROSSING, LABEL_DISPERSION, DatasetSplit
from .seeding import STREAM_MODEL_INIT, derive_rng
from .training import load_model_arrays
from .volio import write_volume


def load_model(model_cfg, checkpoint_path) -> tuple[InpaintingGan, float]:
    """Build a model and restore it from a checkpoint; returns (model, norm scale)."""
    ckpt = read_checkpoint(checkpoint_path)
    model = InpaintingGan(model_cfg, derive_rng(0, STREAM_MODEL_INIT))
    norm_scale = load_model_arrays(model, ckpt.arrays)
    return model, norm_scale


@dataclass
class CohortEvaluation:
    records_by_scan: dict[int, list[PatchRecord]]
    maps_by_scan: dict[int, ComplexityMap]
    calibration: CalibrationReport
    crossing_cov: np.ndarray
    bundle_cov: np.ndarray
    dispersion_cov: np.ndarray
    mannwhitney_p: float


def evaluate_test_split(
    model: InpaintingGan,
    norm_scale: float,
    volumes: dict[int, VectorVolume],
    labels: dict[int, np.ndarray],
    split: DatasetSplit,
    rel_threshold: float,
    stride: int,
    batch: int,
) -> CohortEvaluation:
    if not split.test:
        raise ContractError("test split is empty")
    records_by_scan: dict[int, list[PatchRecord]] = {}
    maps_by_scan: dict[int, ComplexityMap] = {}
    crossing, bundle, dispersion = [], [], []
    for scan_id in split.test:
        volume = VectorVolume((volumes[scan_id].vectors / norm_scale).astype(np.float32))
        threshold = default_threshold(volume, rel_threshold)
        mask = white_matter_mask(volume, threshold)
        records = evaluate_volume(model, volume, mask, stride=stride, batch=batch)
        cmap = aggregate_maps(records, volume.dims, threshold, model.cfg.n)
        records_by_scan[scan_id] = records
        maps_by_scan[scan_id] = cmap
        if scan_id in labels:
            crossing.append(region_cov_values(cmap, labels[scan_id], LABEL_CROSSING))
            bundle.append(region_cov_values(cmap, labels[scan_id], LABEL_BUNDLE))
            dispersion.append(region_cov_values(cmap, labels[scan_id], LABEL_DISPERSION))
    all_records = [rec for recs in records_by_scan.values() for rec in recs]
    calib = calibration(all_records)
    crossing_cov = np.concatenate(crossing) if crossing else np.empty(0)
    bundle_cov = np.concatenate(bundle) if bundle else np.empty(0)
    dispersion_cov = np.concatenate(dispersion) if dispersion else np.empty(0)
    if crossing_cov.size and bundle_cov.size:
        mw_p = float(
            scipy_stats.mannwhitneyu(crossing_cov, bundle_cov, alternative="greater").pvalue
        )
    else:
        mw_p = float("nan")
    return CohortEvaluation(
        records_by_scan=records_by_scan,
        maps_by_scan=maps_by_scan,
        calibration=calib,
        crossing_cov=crossing_cov,
        bundle_cov=bundle_cov,
        dispersion_cov=dispersion_cov,
        mannwhitney_p=mw_p,
    )


def _write_tables(out_dir: str, evaluation: CohortEvaluation, labels: dict[int, np.ndarray]) -> None:
    lines = ["scan_id\tcorner_x\tcorner_y\tcorner_z\tmean_variance\tmean_error"]
    for scan_id, records in sorted(evaluation.records_by_scan.items()):
        for rec in records:
            lines.append(
                f"{scan_id}\t{rec.corner[0]}\t{rec.corner[1]}\t{rec.corner[2]}"
                f"\t{rec.variance.mean():.9g}\t{rec.error.mean():.9g}"
            )
    with open(os.path.join(out_dir, "calibration.tsv"), "w") as handle:
        handle.write("\n".join(lines) + "\n")

    lines = ["scan_id\tregion\tvoxels\tmean_cov\tmedian_cov"]
    for scan_id, cmap in sorted(evaluation.maps_by_scan.items()):
        if scan_id not in labels:
            continue
        for stats in region_report(cmap, labels[scan_id]):
            lines.append(
                f"{scan_id}\t{stats.name}\t{stats.voxels}\t{stats.mean_cov:.9g}\t{stats.median_cov:.9g}"
            )
    with open(os.path.join(out_dir, "regions.tsv"), "w") as handle:
        handle.write("\n".join(lines) + "\n")


def _summary_text(evaluation: CohortEvaluation) -> str:
    calib = evaluation.calibration
    def _mean(values: np.ndarray) -> float:
        return float(values.mean()) if values.size else float("nan")

    fields = [
        ("n_patches", calib.n_patches),
        ("pearson_r", f"{calib.pearson_r:.6f}"),
        ("pearson_p", f"{calib.p_value:.6e}"),
        ("cov_bundle_mean", f"{_mean(evaluation.bundle_cov):.6f}"),
        ("cov_crossing_mean", f"{_mean(evaluation.crossing_cov):.6f}"),
        ("cov_dispersion_mean", f"{_mean(evaluation.dispersion_cov):.6f}"),
        ("crossing_gt_bundle_p", f"{evaluation.mannwhitney_p:.6e}"),
    ]
    return "\n".join(f"{key}={value}" for key, value in fields) + "\n"


def evaluate_cohort(
    cfg: RunConfig,
    checkpoint_path: str,
    volumes: dict[int, VectorVolume],
    labels: dict[int, np.ndarray],
    split: DatasetSplit,
    out_dir: str,
) -> str:
    """Full eval command: maps, tables, summary, and figures under out_dir."""
    from . import figures

    model, norm_scale = load_model(cfg.model_config(), checkpoint_path)
    evaluation = evaluate_test_split(
        model,
        norm_scale,
        volumes,
        labels,
        split,
        rel_threshold=cfg["mask.rel_threshold"],
        stride=cfg["eval.stride"],
        batch=cfg["eval.batch"],
    )
    os.makedirs(out_dir, exist_ok=True)
    figures_dir = os.path.join(out_dir, "figures")
    os.makedirs(figures_dir, exist_ok=True)
    for scan_id, cmap in sorted(evaluation.maps_by_scan.items()):
        prefix = os.path.join(out_dir, f"scan_{scan_id:03d}")
        write_volume(f"{prefix}_variance.mdav", cmap.variance.astype(np.float32)[..., None])
        write_volume(f"{prefix}_error.mdav", cmap.error.astype(np.float32)[..., None])
        write_volume(f"{prefix}_cov.mdav", cmap.cov.astype(np.float32)[..., None])
        mid = cmap.dims[2] // 2
        figures.save_map_figure(
            os.path.join(figures_dir, f"scan_{scan_id:03d}_cov_z{mid}.png"),
            cmap.cov[:, :, mid],
            title=f"scan {scan_id}: complexity (z={mid})",
            value_label="coefficient of variation",
        )
    _write_tables(out_dir, evaluation, labels)
    mean_vars = np.array([r.variance.mean() for recs in evaluation.records_by_scan.values() for r in recs])
    mean_errs = np.array([r.error.mean() for recs in evaluation.records_by_scan.values() for r in recs])
    figures.save_calibration_figure(
        os.path.join(figures_dir, "calibration.png"),
        mean_vars,
        mean_errs,
        evaluation.calibration.pearson_r,
        evaluation.calibration.p_value,
    )
    summary = _summary_text(evaluation)
    with open(os.path.join(out_dir, "summary.txt"), "w") as handle:
        handle.write(summary)
    return summary.strip()

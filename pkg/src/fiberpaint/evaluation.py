"""Whole-volume evaluation: strided inference, per-voxel complexity maps,
and the variance-versus-error calibration check.

Patch low-corners are placed on a stride lattice anchored at the first
valid position; every covered voxel accumulates the mean predicted
variance, the mean sign-symmetric error, and the mean ground-truth
magnitude over the patches that contain it.  Voxels the lattice skips are
filled by trilinear interpolation between the nearest evaluated
coordinates.  The coefficient of variation sqrt(variance) / magnitude is
reported only where the mean magnitude clears the threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as scipy_stats

from .autodiff import Tensor, no_grad
from .errors import ContractError
from .fields import PatchSpec, VectorVolume, extract_sample, symmetric_l2_grid, valid_patch_corners
from .model import InpaintingGan
from .phantoms import LABEL_BACKGROUND, LABEL_NAMES


@dataclass(frozen=True)
class PatchRecord:
    corner: tuple[int, int, int]
    variance: np.ndarray  # [n, n, n] predicted aleatoric variance
    error: np.ndarray  # [n, n, n] sign-symmetric distance to ground truth
    magnitude: np.ndarray  # [n, n, n] ground-truth vector magnitude


@dataclass(frozen=True)
class ComplexityMap:
    dims: tuple[int, int, int]
    variance: np.ndarray  # NaN where absent
    error: np.ndarray
    cov: np.ndarray
    magnitude: np.ndarray
    count: np.ndarray
    threshold: float


@dataclass(frozen=True)
class CalibrationReport:
    pearson_r: float
    p_value: float
    n_patches: int


def lattice_corners(corners: np.ndarray, stride: int) -> np.ndarray:
    """Valid positions restricted to the stride lattice anchored at the
    first (lexicographically smallest) valid position."""
    if len(corners) == 0:
        return corners
    order = np.lexsort((corners[:, 2], corners[:, 1], corners[:, 0]))
    anchor = corners[order[0]]
    keep = np.all((corners - anchor) % stride == 0, axis=1)
    return corners[keep]


def evaluate_volume(
    model: InpaintingGan,
    volume: VectorVolume,
    wm_mask: np.ndarray,
    stride: int = 2,
    batch: int = 64,
) -> list[PatchRecord]:
    """Run the generator over the stride lattice of valid patch positions."""
    if stride < 1:
        raise ContractError(f"stride must be positive, got {stride}")
    n = model.cfg.n
    corners = lattice_corners(valid_patch_corners(volume.dims, n, wm_mask), stride)
    if len(corners) == 0:
        raise ContractError("no valid white-matter patch position to evaluate")
    order = np.lexsort((corners[:, 2], corners[:, 1], corners[:, 0]))
    corners = corners[order]

    records: list[PatchRecord] = []
    for start in range(0, len(corners), batch):
        block = corners[start : start + batch]
        samples = [
            extract_sample(volume, PatchSpec(n=n, corner=tuple(int(c) for c in corner)))
            for corner in block
        ]
        contexts = np.stack([s.context for s in samples])
        truths = np.stack([s.patch for s in samples])
        with no_grad():
            _, p_hat, s = model.generator_forward(Tensor(contexts))
        variance = np.exp(s.data[..., 0])
        error = symmetric_l2_grid(truths, p_hat.data)
        magnitude = np.sqrt(np.sum(truths * truths, axis=-1))
        for idx, corner in enumerate(block):
            records.append(
                PatchRecord(
                    corner=tuple(int(c) for c in corner),
                    variance=variance[idx].astype(np.float64),
                    error=error[idx].astype(np.float64),
                    magnitude=magnitude[idx].astype(np.float64),
                )
            )
    return records


def _interpolate_gaps(grid: np.ndarray, present: np.ndarray) -> np.ndarray:
    """Fill absent voxels by trilinear interpolation between the nearest
    present coordinates per axis.

    A voxel is filled only when all 8 enclosing cell corners hold values;
    the nested-lerp evaluation reproduces constant fields exactly.
    """
    filled = grid.copy()
    if present.all() or not present.any():
        return filled
    axis_coords = []
    for axis in range(3):
        others = tuple(a for a in range(3) if a != axis)
        axis_coords.append(np.nonzero(present.any(axis=others))[0])
    for vox in np.argwhere(~present):
        bounds: list[tuple[int, int, float]] | None = []
        for axis in range(3):
            coords = axis_coords[axis]
            pos = int(np.searchsorted(coords, vox[axis]))
            if pos < len(coords) and coords[pos] == vox[axis]:
                bounds.append((int(vox[axis]), int(vox[axis]), 0.0))
            elif 0 < pos < len(coords):
                lo, hi = int(coords[pos - 1]), int(coords[pos])
                bounds.append((lo, hi, (int(vox[axis]) - lo) / (hi - lo)))
            else:
                bounds = None
                break
        if bounds is None:
            continue
        xs, ys, zs = ((lo, hi) for lo, hi, _ in bounds)
        cell = np.empty((2, 2, 2))
        ok = True
        for ia, ib, ic in np.ndindex(2, 2, 2):
            point = (xs[ia], ys[ib], zs[ic])
            if not present[point]:
                ok = False
                break
            cell[ia, ib, ic] = grid[point]
        if not ok:
            continue
        tx, ty, tz = (t for _, _, t in bounds)
        face = cell[0] + tx * (cell[1] - cell[0])
        edge = face[0] + ty * (face[1] - face[0])
        filled[tuple(vox)] = edge[0] + tz * (edge[1] - edge[0])
    return filled


def aggregate_maps(
    records: list[PatchRecord], dims: tuple[int, int, int], threshold: float, n: int
) -> ComplexityMap:
    """Per-voxel means over covering patches, gap interpolation, and the
    thresholded coefficient-of-variation grid."""
    if not records:
        raise ContractError("cannot aggregate an empty record list")
    var_sum = np.zeros(dims)
    err_sum = np.zeros(dims)
    mag_sum = np.zeros(dims)
    count = np.zeros(dims, dtype=np.int64)
    for rec in records:
        sl = tuple(slice(c, c + n) for c in rec.corner)
        var_sum[sl] += rec.variance
        err_sum[sl] += rec.error
        mag_sum[sl] += rec.magnitude
        count[sl] += 1
    present = count > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        variance = np.where(present, var_sum / count, np.nan)
        error = np.where(present, err_sum / count, np.nan)
        magnitude = np.where(present, mag_sum / count, np.nan)
    variance = _interpolate_gaps(variance, present)
    error = _interpolate_gaps(error, present)
    magnitude = _interpolate_gaps(magnitude, present)
    filled = np.isfinite(variance)
    with np.errstate(invalid="ignore"):
        cov = np.where(filled & (magnitude >= threshold), np.sqrt(variance) / magnitude, np.nan)
    return ComplexityMap(
        dims=dims,
        variance=variance,
        error=error,
        cov=cov,
        magnitude=magnitude,
        count=count,
        threshold=threshold,
    )


def coefficient_of_variation(variance: np.ndarray, magnitude: np.ndarray, threshold: float) -> np.ndarray:
    """sqrt(variance) / magnitude where magnitude clears the threshold, else NaN."""
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(magnitude >= threshold, np.sqrt(variance) / magnitude, np.nan)


def calibration(records: list[PatchRecord]) -> CalibrationReport:
    """Pearson correlation between per-patch mean variance and mean error.

    The p-value uses the t transform with n - 2 degrees of freedom.
    """
    if len(records) < 3:
        raise ContractError(f"calibration needs at least 3 patches, got {len(records)}")
    mean_var = np.array([rec.variance.mean() for rec in records])
    mean_err = np.array([rec.error.mean() for rec in records])
    if mean_var.std() == 0 or mean_err.std() == 0:
        raise ContractError("calibration is undefined: zero variance in the paired samples")
    r = float(scipy_stats.pearsonr(mean_var, mean_err).statistic)
    n = len(records)
    if abs(r) >= 1.0:
        p = 0.0
    else:
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * scipy_stats.t.sf(abs(t), df=n - 2))
    return CalibrationReport(pearson_r=r, p_value=p, n_patches=n)


@dataclass(frozen=True)
class RegionStats:
    label: int
    name: str
    voxels: int
    mean_cov: float
    median_cov: float


def region_report(cmap: ComplexityMap, labels: np.ndarray) -> list[RegionStats]:
    """Mean/median coefficient of variation per phantom region label.

    Background is excluded; regions without any present cov voxel are
    reported with zero voxels rather than erroring.
    """
    if labels.shape != cmap.dims:
        raise ContractError(f"label grid shape {labels.shape} does not match map dims {cmap.dims}")
    out = []
    for label, name in sorted(LABEL_NAMES.items()):
        if label == LABEL_BACKGROUND:
            continue
        values = cmap.cov[(labels == label) & np.isfinite(cmap.cov)]
        if values.size:
            out.append(RegionStats(label, name, int(values.size), float(values.mean()), float(np.median(values))))
        else:
            out.append(RegionStats(label, name, 0, float("nan"), float("nan")))
    return out


def region_cov_values(cmap: ComplexityMap, labels: np.ndarray, label: int) -> np.ndarray:
    """All present cov values for one region label (pooling helper)."""
    return cmap.cov[(labels == label) & np.isfinite(cmap.cov)]

"""Vector-field data model: sign-ambiguous orientation volumes, the
sign-symmetric distance, and patch/context extraction with zero masking.

A voxel's 3-vector and its negation denote the same fiber orientation, so
every metric here is invariant to independent per-voxel sign flips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class VectorVolume:
    """An X*Y*Z grid of orientation vectors with arbitrary per-voxel sign.

    ``spacing`` is metadata only (mm per voxel edge).
    """

    vectors: np.ndarray  # [X, Y, Z, 3] float32
    spacing: float = 1.0

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 4 or v.shape[3] != 3:
            raise ContractError(f"vector grid must be [X,Y,Z,3], got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ContractError("vector grid contains non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.vectors.shape[:3]

    def magnitudes(self) -> np.ndarray:
        return np.sqrt(np.sum(self.vectors * self.vectors, axis=-1))


@dataclass(frozen=True)
class PatchSpec:
    """Patch geometry: side length n and the patch's low-corner voxel.

    The context is the cube of side 2n whose low corner sits n // 2 voxels
    below the patch corner: exactly centered for even n, floor-offset for
    odd n (positions index the low corner to avoid center ambiguity).
    """

    n: int
    corner: tuple[int, int, int]

    def __post_init__(self):
        if self.n < 1:
            raise ContractError(f"patch side must be positive, got {self.n}")

    @property
    def context_corner(self) -> tuple[int, int, int]:
        half = self.n // 2
        return tuple(c - half for c in self.corner)

    @property
    def center_voxel(self) -> tuple[int, int, int]:
        half = self.n // 2
        return tuple(c + half for c in self.corner)


@dataclass(frozen=True)
class PatchSample:
    """Zero-masked context block plus the ground-truth patch it hides."""

    context: np.ndarray  # [2n, 2n, 2n, 3], central n^3 region zeroed
    patch: np.ndarray  # [n, n, n, 3]
    spec: PatchSpec


def symmetric_l2_grid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sign-symmetric distance min(|a-b|, |a+b|) over trailing 3-vectors.

    The loss path reproduces this exact operation order, so results agree
    bitwise with the training objective's reconstruction residuals.
    """
    d_minus = a - b
    d_plus = a + b
    return np.minimum(
        np.sqrt(np.sum(d_minus * d_minus, axis=-1)),
        np.sqrt(np.sum(d_plus * d_plus, axis=-1)),
    )


def symmetric_l2(x, y) -> float:
    """Scalar form of the sign-symmetric distance between two 3-vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != (3,) or y.shape != (3,):
        raise ContractError("symmetric_l2 expects two 3-vectors")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ContractError("symmetric_l2 requires finite inputs")
    return float(symmetric_l2_grid(x, y))


def extract_sample(vol: VectorVolume, spec: PatchSpec) -> PatchSample:
    """Cut the 2n context around a patch, zero its center, keep the truth."""
    n = spec.n
    lo = spec.context_corner
    hi = tuple(c + 2 * n for c in lo)
    for axis, (c_lo, c_hi, extent) in enumerate(zip(lo, hi, vol.dims)):
        if c_lo < 0 or c_hi > extent:
            raise ContractError(
                f"context out of bounds on axis {axis}: [{c_lo}, {c_hi}) exceeds extent {extent} "
                f"for patch corner {spec.corner}"
            )
    context = vol.vectors[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2], :].copy()
    half = n // 2
    patch = context[half : half + n, half : half + n, half : half + n, :].copy()
    context[half : half + n, half : half + n, half : half + n, :] = 0
    return PatchSample(context=context, patch=patch, spec=spec)


def paste_patch(sample: PatchSample, patch: np.ndarray) -> np.ndarray:
    """Inverse of the masking step: patch written back into the context center."""
    n = sample.spec.n
    half = n // 2
    block = sample.context.copy()
    block[half : half + n, half : half + n, half : half + n, :] = patch
    return block


def white_matter_mask(vol: VectorVolume, threshold: float) -> np.ndarray:
    """Boolean grid of voxels whose vector magnitude reaches the threshold."""
    if threshold < 0:
        raise ContractError(f"threshold must be nonnegative, got {threshold}")
    return vol.magnitudes() >= threshold


def default_threshold(vol: VectorVolume, rel: float = 0.1) -> float:
    """Magnitude cutoff at ``rel`` times the volume's 99th-percentile magnitude."""
    return rel * float(np.percentile(vol.magnitudes(), 99.0))


def canonicalize_signs(vol: VectorVolume, rng: np.random.Generator) -> VectorVolume:
    """Flip each voxel's sign independently at random.

    Semantics are unchanged under the sign-symmetric distance; training uses
    this to exercise the orientation sign ambiguity.
    """
    flips = np.where(rng.random(vol.dims) < 0.5, -1.0, 1.0).astype(vol.vectors.dtype)
    return VectorVolume(vectors=vol.vectors * flips[..., None], spacing=vol.spacing)


def flip_signs(block: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-voxel random sign flip of a [..., 3] array (augmentation helper)."""
    flips = np.where(rng.random(block.shape[:-1]) < 0.5, -1.0, 1.0).astype(block.dtype)
    return block * flips[..., None]


def valid_patch_corners(dims: tuple[int, int, int], n: int, wm_mask: np.ndarray) -> np.ndarray:
    """All patch low-corners whose context fits in bounds and whose center
    voxel is white matter.  Returned as an [M, 3] int array in C order."""
    half = n // 2
    ranges = []
    for extent in dims:
        lo = half
        hi = extent - 2 * n + half  # inclusive
        if hi < lo:
            return np.empty((0, 3), dtype=np.int64)
        ranges.append(np.arange(lo, hi + 1))
    gx, gy, gz = np.meshgrid(*ranges, indexing="ij")
    corners = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    centers = corners + half
    keep = wm_mask[centers[:, 0], centers[:, 1], centers[:, 2]]
    return corners[keep]

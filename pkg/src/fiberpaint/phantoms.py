"""Synthetic fiber phantoms: straight and arced bundles, crossing pockets
with per-voxel winner-take-one mixing, and dispersing fans.

Each voxel keeps a single orientation vector, so a crossing region is
irreducibly ambiguous for an inpainting model: the ground truth there is
drawn from one of two bundle directions at random.  Region labels
(background, bundle interior, crossing, dispersion) are emitted alongside
the vectors so evaluation can report complexity per region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .fields import PatchSpec, VectorVolume
from .seeding import (
    STREAM_EPOCH_SAMPLE,
    STREAM_PHANTOM_GEOMETRY,
    STREAM_PHANTOM_NOISE,
    STREAM_SCAN_SEED,
    STREAM_SPLIT,
    derive_rng,
    derive_seed,
)

LABEL_BACKGROUND = 0
LABEL_BUNDLE = 1
LABEL_CROSSING = 2
LABEL_DISPERSION = 3

LABEL_NAMES = {
    LABEL_BACKGROUND: "background",
    LABEL_BUNDLE: "bundle",
    LABEL_CROSSING: "crossing",
    LABEL_DISPERSION: "dispersion",
}


@dataclass(frozen=True)
class Bundle:
    """A tube around a straight segment or a quadratic arc.

    For arcs the centerline is the quadratic Bezier through p0, control, p1.
    """

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float
    control: tuple[float, float, float] | None = None

    def centerline(self, samples: int) -> tuple[np.ndarray, np.ndarray]:
        """Sampled points and unit tangents along the centerline."""
        t = np.linspace(0.0, 1.0, samples)[:, None]
        p0 = np.asarray(self.p0, dtype=np.float64)
        p1 = np.asarray(self.p1, dtype=np.float64)
        if self.control is None:
            points = p0 + t * (p1 - p0)
            tangents = np.broadcast_to(p1 - p0, points.shape).copy()
        else:
            c = np.asarray(self.control, dtype=np.float64)
            points = (1 - t) ** 2 * p0 + 2 * t * (1 - t) * c + t**2 * p1
            tangents = 2 * (1 - t) * (c - p0) + 2 * t * (p1 - c)
        norms = np.linalg.norm(tangents, axis=1, keepdims=True)
        return points, tangents / np.maximum(norms, 1e-12)


@dataclass(frozen=True)
class CrossingRegion:
    """Declared overlap of two bundles; the first wins with probability weight."""

    bundles: tuple[int, int]
    weight: float

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ContractError(f"crossing weight must lie in [0, 1], got {self.weight}")


@dataclass(frozen=True)
class DispersionRegion:
    """Axis-aligned box where bundle tangents fan out by a random rotation."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]
    half_angle_deg: float

    def __post_init__(self):
        if not 0.0 <= self.half_angle_deg <= 90.0:
            raise ContractError(f"fan half-angle must lie in [0, 90] degrees, got {self.half_angle_deg}")


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple[int, int, int]
    bundles: tuple[Bundle, ...]
    crossings: tuple[CrossingRegion, ...] = ()
    dispersions: tuple[DispersionRegion, ...] = ()
    magnitude: float = 1.0
    angular_jitter_deg: float = 5.0
    magnitude_jitter: float = 0.05
    background_rel: float = 0.005
    seed: int = 0


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]

    def all_scans(self) -> tuple[int, ...]:
        return tuple(sorted(self.train + self.val + self.test))


def _rotate(vectors: np.ndarray, axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of each row vector about its own unit axis."""
    cos_a = np.cos(angles)[:, None]
    sin_a = np.sin(angles)[:, None]
    dot = np.sum(axes * vectors, axis=1, keepdims=True)
    return vectors * cos_a + np.cross(axes, vectors) * sin_a + axes * dot * (1.0 - cos_a)


def _random_axes(rng: np.random.Generator, count: int) -> np.ndarray:
    axes = rng.normal(size=(count, 3))
    return axes / np.maximum(np.linalg.norm(axes, axis=1, keepdims=True), 1e-12)


def generate_phantom(cfg: PhantomConfig) -> tuple[VectorVolume, np.ndarray]:
    """Build the vector volume and the per-voxel region label grid."""
    dims = cfg.dims
    rng = derive_rng(cfg.seed, STREAM_PHANTOM_NOISE)
    coords = np.stack(
        np.meshgrid(*(np.arange(e, dtype=np.float64) for e in dims), indexing="ij"), axis=-1
    ).reshape(-1, 3)
    n_vox = coords.shape[0]

    occupancy = np.zeros((len(cfg.bundles), n_vox), dtype=bool)
    tangent = np.zeros((len(cfg.bundles), n_vox, 3))
    samples = 4 * max(dims)
    for b_idx, bundle in enumerate(cfg.bundles):
        points, tangents = bundle.centerline(samples)
        for axis in range(3):
            if np.any(points[:, axis] < 0) or np.any(points[:, axis] > dims[axis] - 1):
                raise ContractError(f"bundle {b_idx} centerline leaves the volume on axis {axis}")
        d_min = np.full(n_vox, np.inf)
        arg = np.zeros(n_vox, dtype=np.int64)
        for s_idx in range(samples):
            d2 = np.sum((coords - points[s_idx]) ** 2, axis=1)
            closer = d2 < d_min
            d_min[closer] = d2[closer]
            arg[closer] = s_idx
        occupancy[b_idx] = d_min <= bundle.radius**2
        tangent[b_idx] = tangents[arg]

    declared = {tuple(sorted(c.bundles)): c.weight for c in cfg.crossings}
    counts = occupancy.sum(axis=0)
    if np.any(counts > 2):
        raise ContractError("more than two bundles overlap in one voxel; geometry is ambiguous")
    for i in range(len(cfg.bundles)):
        for j in range(i + 1, len(cfg.bundles)):
            if np.any(occupancy[i] & occupancy[j]) and (i, j) not in declared:
                raise ContractError(
                    f"bundles {i} and {j} overlap without a declared crossing region"
                )

    vectors = np.zeros((n_vox, 3))
    labels = np.zeros(n_vox, dtype=np.uint8)
    for b_idx in range(len(cfg.bundles)):
        only = occupancy[b_idx] & (counts == 1)
        vectors[only] = tangent[b_idx][only]
        labels[only] = LABEL_BUNDLE
    for crossing in cfg.crossings:
        i, j = crossing.bundles
        both = occupancy[i] & occupancy[j]
        if not np.any(both):
            continue
        pick_first = rng.random(int(both.sum())) < crossing.weight
        chosen = np.where(pick_first[:, None], tangent[i][both], tangent[j][both])
        vectors[both] = chosen
        labels[both] = LABEL_CROSSING

    for region in cfg.dispersions:
        in_box = np.all((coords >= np.asarray(region.lo)) & (coords < np.asarray(region.hi)), axis=1)
        fan = in_box & (labels == LABEL_BUNDLE)
        count = int(fan.sum())
        if count:
            angles = rng.uniform(0.0, np.deg2rad(region.half_angle_deg), size=count)
            vectors[fan] = _rotate(vectors[fan], _random_axes(rng, count), angles)
            labels[fan] = LABEL_DISPERSION

    foreground = labels != LABEL_BACKGROUND
    fg_count = int(foreground.sum())
    if fg_count:
        if cfg.angular_jitter_deg > 0:
            angles = rng.normal(0.0, np.deg2rad(cfg.angular_jitter_deg), size=fg_count)
            vectors[foreground] = _rotate(vectors[foreground], _random_axes(rng, fg_count), angles)
        scale = cfg.magnitude * (1.0 + rng.normal(0.0, cfg.magnitude_jitter, size=fg_count))
        vectors[foreground] *= scale[:, None]

    background = ~foreground
    bg_count = int(background.sum())
    if bg_count:
        sigma = cfg.background_rel * cfg.magnitude / np.sqrt(3.0)
        vectors[background] = rng.normal(0.0, sigma, size=(bg_count, 3))

    signs = np.where(rng.random(n_vox) < 0.5, -1.0, 1.0)
    vectors *= signs[:, None]

    grid = vectors.reshape(*dims, 3).astype(np.float32)
    return VectorVolume(vectors=grid), labels.reshape(dims)


def desk_phantom_config(
    dims: tuple[int, int, int],
    scan_seed: int,
    magnitude: float = 1.0,
    angular_jitter_deg: float = 5.0,
    magnitude_jitter: float = 0.05,
    crossing_weight: float = 0.5,
    dispersion_half_angle_deg: float = 30.0,
    background_rel: float = 0.005,
) -> PhantomConfig:
    """One scan of the desk-scale family: two crossing straight bundles, an
    optional arced third bundle at a separated depth, and a dispersing fan
    on the first bundle's exit face."""
    rng = derive_rng(scan_seed, STREAM_PHANTOM_GEOMETRY)
    d = np.asarray(dims, dtype=np.float64)
    cz = rng.uniform(0.42 * d[2], 0.58 * d[2])
    y_a = rng.uniform(0.3 * d[1], 0.7 * d[1])
    x_b = rng.uniform(0.3 * d[0], 0.7 * d[0])

    bundle_a = Bundle(
        p0=(0.0, y_a + rng.uniform(-1.5, 1.5), cz + rng.uniform(-1.0, 1.0)),
        p1=(d[0] - 1.0, y_a + rng.uniform(-1.5, 1.5), cz + rng.uniform(-1.0, 1.0)),
        radius=rng.uniform(3.0, 4.5),
    )
    bundle_b = Bundle(
        p0=(x_b + rng.uniform(-1.5, 1.5), 0.0, cz + rng.uniform(-1.5, 1.5)),
        p1=(x_b + rng.uniform(-1.5, 1.5), d[1] - 1.0, cz + rng.uniform(-1.5, 1.5)),
        radius=rng.uniform(3.0, 4.5),
    )
    bundles = [bundle_a, bundle_b]

    if rng.random() < 0.6 and min(dims) >= 32:
        offset = 10.0 if cz <= d[2] / 2 else -10.0
        cz2 = float(np.clip(cz + offset, 4.0, d[2] - 5.0))
        y0 = rng.uniform(0.3 * d[1], 0.7 * d[1])
        bundles.append(
            Bundle(
                p0=(0.0, y0, cz2),
                p1=(d[0] - 1.0, y0 + rng.uniform(-2.0, 2.0), cz2),
                control=(d[0] / 2.0, float(np.clip(y0 + rng.uniform(-8.0, 8.0), 4.0, d[1] - 5.0)), cz2),
                radius=rng.uniform(2.2, 3.0),
            )
        )

    fan_depth = max(6, dims[0] // 4)
    return PhantomConfig(
        dims=dims,
        bundles=tuple(bundles),
        crossings=(CrossingRegion(bundles=(0, 1), weight=crossing_weight),),
        dispersions=(
            DispersionRegion(
                lo=(dims[0] - fan_depth, 0, 0), hi=dims, half_angle_deg=dispersion_half_angle_deg
            ),
        ),
        magnitude=magnitude,
        angular_jitter_deg=angular_jitter_deg,
        magnitude_jitter=magnitude_jitter,
        background_rel=background_rel,
        seed=scan_seed,
    )


def scan_seed(master_seed: int, scan_index: int) -> int:
    return derive_seed(master_seed, STREAM_SCAN_SEED, scan_index)


def make_split(num_scans: int, ratios: tuple[float, float, float], seed: int) -> DatasetSplit:
    """Disjoint, exhaustive, seed-deterministic scan assignment.

    Split sizes follow the largest-remainder rule on num_scans * ratio;
    remainder ties break toward the earlier split.
    """
    if num_scans < 3:
        raise ContractError(f"need at least 3 scans to split, got {num_scans}")
    if abs(sum(ratios) - 1.0) > 0.01:
        raise ContractError(f"split ratios must sum to 1, got {sum(ratios)}")
    quotas = [num_scans * r for r in ratios]
    sizes = [int(np.floor(q)) for q in quotas]
    remainders = [q - s for q, s in zip(quotas, sizes)]
    for _ in range(num_scans - sum(sizes)):
        winner = max(range(3), key=lambda i: (remainders[i], -i))
        sizes[winner] += 1
        remainders[winner] = -1.0
    if any(s == 0 for s in sizes):
        raise ContractError(f"split ratios {ratios} leave an empty split for {num_scans} scans")
    order = derive_rng(seed, STREAM_SPLIT).permutation(num_scans)
    train = tuple(sorted(int(i) for i in order[: sizes[0]]))
    val = tuple(sorted(int(i) for i in order[sizes[0] : sizes[0] + sizes[1]]))
    test = tuple(sorted(int(i) for i in order[sizes[0] + sizes[1] :]))
    return DatasetSplit(train=train, val=val, test=test)


def sample_epoch(
    corner_sets: list[np.ndarray], scan_ids: list[int], n: int, seed: int, epoch: int
) -> list[PatchSpec]:
    """One uniformly drawn patch position per scan, reproducible from
    (seed, epoch, scan index)."""
    specs = []
    for scan_index, (scan_id, corners) in enumerate(zip(scan_ids, corner_sets)):
        if len(corners) == 0:
            raise ContractError(f"scan {scan_id} has no valid white-matter patch position")
        rng = derive_rng(seed, STREAM_EPOCH_SAMPLE, epoch, scan_index)
        pick = corners[int(rng.integers(len(corners)))]
        specs.append(PatchSpec(n=n, corner=(int(pick[0]), int(pick[1]), int(pick[2]))))
    return specs

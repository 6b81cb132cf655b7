"""Alternating GAN training over a phantom cohort.

Each epoch draws one white-matter patch per training scan, shuffles the
draws into batches, and runs one discriminator update followed by one
generator update per batch.  All randomness is derived from
(seed, stream, epoch, scan index), so a run is reproducible and a resumed
run retraces the uninterrupted trajectory bitwise.

Inputs are globally normalized by the training split's mean white-matter
magnitude, and the patch-value clip statistics are frozen from the same
split before the first update.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .checkpoints import read_checkpoint, write_checkpoint
from .errors import ContractError
from .fields import (
    PatchSpec,
    VectorVolume,
    default_threshold,
    extract_sample,
    flip_signs,
    symmetric_l2_grid,
    valid_patch_corners,
    white_matter_mask,
)
from .losses import discriminator_accuracy, discriminator_loss, generator_loss
from .model import InpaintingGan, ModelConfig, training_clip_stats
from .optim import Adam
from .phantoms import DatasetSplit, sample_epoch
from .seeding import (
    STREAM_AUGMENT,
    STREAM_EPOCH_SHUFFLE,
    STREAM_MODEL_INIT,
    STREAM_TRAINER_STATE,
    STREAM_VALIDATION,
    derive_rng,
)

METRIC_COLUMNS = (
    "epoch",
    "total",
    "adversarial",
    "reconstruction",
    "variance-penalty",
    "coarse",
    "d-accuracy",
    "val-error",
)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 300
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    smoothing: float = 0.9
    seed: int = 0
    coarse_weight: float = 1.0
    squared_residual: bool = False
    sign_augment: bool = True
    checkpoint_every: int = 50
    rel_threshold: float = 0.1

    def __post_init__(self):
        if self.batch_size < 2:
            raise ContractError(f"batch size must be at least 2, got {self.batch_size}")
        if not 0.5 < self.smoothing <= 1.0:
            raise ContractError(f"label smoothing must lie in (0.5, 1], got {self.smoothing}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be positive, got {self.epochs}")


@dataclass
class _Scan:
    scan_id: int
    volume: VectorVolume  # normalized copy of the source volume
    wm_mask: np.ndarray
    corners: np.ndarray


def load_model_arrays(model: InpaintingGan, arrays: dict[str, np.ndarray]) -> float:
    """Restore model parameters, batch-norm state, and clip statistics from
    a checkpoint's tensor section; returns the stored normalization scale."""
    for name, p in model.all_parameters().items():
        if name not in arrays:
            raise ContractError(f"checkpoint v1 is missing parameter '{name}'")
        if tuple(arrays[name].shape) != p.data.shape:
            raise ContractError(
                f"checkpoint v1 parameter '{name}' has shape {arrays[name].shape}, "
                f"model expects {p.data.shape}"
            )
        p.data = arrays[name].astype(p.data.dtype)
        p.zero_grad()
    for _, bn in model.disc_blocks:
        bn.running_mean = arrays[f"{bn.name}.running_mean"].astype(bn.running_mean.dtype)
        bn.running_var = arrays[f"{bn.name}.running_var"].astype(bn.running_var.dtype)
        bn.initialized = bool(int(arrays[f"{bn.name}.initialized"]))
    model.set_clip_stats(arrays["stats.clip_mean"], arrays["stats.clip_std"])
    return float(arrays["stats.norm_scale"])


class Trainer:
    def __init__(
        self,
        model_cfg: ModelConfig,
        train_cfg: TrainConfig,
        volumes: dict[int, VectorVolume],
        split: DatasetSplit,
        out_dir: str | Path | None = None,
        config_text: str = "",
    ):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.split = split
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.config_text = config_text
        if not split.train:
            raise ContractError("training split is empty")

        masks = {
            scan_id: white_matter_mask(vol, default_threshold(vol, train_cfg.rel_threshold))
            for scan_id, vol in volumes.items()
        }
        train_mags = np.concatenate(
            [volumes[sid].magnitudes()[masks[sid]] for sid in split.train if masks[sid].any()]
        )
        if train_mags.size == 0:
            raise ContractError("training split has no white-matter voxels")
        self.norm_scale = float(train_mags.mean())

        self._source_volumes = volumes
        self.scans: dict[int, _Scan] = {}
        for scan_id, vol in volumes.items():
            normalized = VectorVolume((vol.vectors / self.norm_scale).astype(np.float32), vol.spacing)
            self.scans[scan_id] = _Scan(
                scan_id=scan_id,
                volume=normalized,
                wm_mask=masks[scan_id],
                corners=valid_patch_corners(vol.dims, model_cfg.n, masks[scan_id]),
            )

        clip_mean, clip_std = training_clip_stats(
            [self.scans[sid].volume.vectors for sid in split.train],
            [self.scans[sid].wm_mask for sid in split.train],
        )
        self.model = InpaintingGan(model_cfg, derive_rng(train_cfg.seed, STREAM_MODEL_INIT))
        self.model.set_clip_stats(clip_mean, clip_std)

        self.opt_g = Adam(
            self.model.generator_parameters(),
            lr=train_cfg.lr,
            beta1=train_cfg.beta1,
            beta2=train_cfg.beta2,
            eps=train_cfg.adam_eps,
        )
        self.opt_d = Adam(
            self.model.discriminator_parameters(),
            lr=train_cfg.lr,
            beta1=train_cfg.beta1,
            beta2=train_cfg.beta2,
            eps=train_cfg.adam_eps,
        )
        self.rng = derive_rng(train_cfg.seed, STREAM_TRAINER_STATE)
        self.epoch = 0
        self.history: list[dict[str, float]] = []
        self._val_specs = self._fixed_validation_specs()

    # -- sampling ----------------------------------------------------------
    def _fixed_validation_specs(self) -> list[tuple[int, PatchSpec]]:
        specs = []
        for index, scan_id in enumerate(self.split.val):
            scan = self.scans[scan_id]
            if len(scan.corners) == 0:
                raise ContractError(f"scan {scan_id} has no valid white-matter patch position")
            rng = derive_rng(self.cfg.seed, STREAM_VALIDATION, index)
            pick = scan.corners[int(rng.integers(len(scan.corners)))]
            specs.append((scan_id, PatchSpec(n=self.model_cfg.n, corner=tuple(int(c) for c in pick))))
        return specs

    def _epoch_samples(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        train_ids = list(self.split.train)
        corner_sets = [self.scans[sid].corners for sid in train_ids]
        specs = sample_epoch(corner_sets, train_ids, self.model_cfg.n, self.cfg.seed, epoch)
        contexts, patches = [], []
        for index, (scan_id, spec) in enumerate(zip(train_ids, specs)):
            sample = extract_sample(self.scans[scan_id].volume, spec)
            context, patch = sample.context, sample.patch
            if self.cfg.sign_augment:
                rng = derive_rng(self.cfg.seed, STREAM_AUGMENT, epoch, index)
                context = flip_signs(context, rng)
                patch = flip_signs(patch, rng)
            contexts.append(context)
            patches.append(patch)
        order = derive_rng(self.cfg.seed, STREAM_EPOCH_SHUFFLE, epoch).permutation(len(contexts))
        return np.stack(contexts)[order], np.stack(patches)[order]

    # -- training ----------------------------------------------------------
    def run(self, epochs: int | None = None) -> list[dict[str, float]]:
        target = self.cfg.epochs if epochs is None else epochs
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        while self.epoch < target:
            self._train_epoch()
            if self.out_dir is not None and (
                self.epoch % self.cfg.checkpoint_every == 0 or self.epoch == target
            ):
                self.save_checkpoint(self.out_dir / f"ckpt_{self.epoch:05d}.mdck")
        return self.history

    def _train_epoch(self) -> None:
        epoch = self.epoch + 1
        contexts, patches = self._epoch_samples(epoch)
        batch = self.cfg.batch_size
        sums = {"total": 0.0, "adversarial": 0.0, "reconstruction": 0.0, "variance_penalty": 0.0, "coarse": 0.0}
        acc_sum, n_batches = 0.0, 0
        for start in range(0, len(contexts), batch):
            ctx_block = contexts[start : start + batch]
            patch_block = patches[start : start + batch]
            if len(ctx_block) < 2:
                break  # final partial batch too small for batch norm
            ctx = Tensor(ctx_block)
            truth = Tensor(patch_block)

            # Discriminator update on real and (detached) generated patches.
            with no_grad():
                _, fake, _ = self.model.generator_forward(ctx)
            self.opt_d.zero_grad()
            real_prob = self.model.discriminator_forward(truth, ctx, training=True)
            fake_prob = self.model.discriminator_forward(Tensor(fake.data), ctx, training=True)
            d_loss = discriminator_loss(real_prob, fake_prob, self.cfg.smoothing)
            d_loss.backward()
            self.opt_d.step()
            acc_sum += discriminator_accuracy(real_prob.data, fake_prob.data)

            # Generator update; the discriminator pass reuses batch statistics
            # but leaves the running averages untouched.
            self.opt_g.zero_grad()
            self.opt_d.zero_grad()
            coarse, p_hat, s = self.model.generator_forward(ctx)
            d_prob = self.model.discriminator_forward(p_hat, ctx, training=True, update_stats=False)
            total, breakdown = generator_loss(
                truth,
                p_hat,
                s,
                d_prob,
                coarse,
                coarse_weight=self.cfg.coarse_weight,
                squared_residual=self.cfg.squared_residual,
            )
            total.backward()
            self.opt_g.step()

            sums["total"] += breakdown.total
            sums["adversarial"] += breakdown.adversarial
            sums["reconstruction"] += breakdown.reconstruction
            sums["variance_penalty"] += breakdown.variance_penalty
            sums["coarse"] += breakdown.coarse
            n_batches += 1

        if n_batches == 0:
            raise ContractError("no trainable batch: need at least 2 samples per epoch")
        row = {
            "epoch": float(epoch),
            "total": sums["total"] / n_batches,
            "adversarial": sums["adversarial"] / n_batches,
            "reconstruction": sums["reconstruction"] / n_batches,
            "variance-penalty": sums["variance_penalty"] / n_batches,
            "coarse": sums["coarse"] / n_batches,
            "d-accuracy": acc_sum / n_batches,
            "val-error": self._validate(),
        }
        self.epoch = epoch
        self.history.append(row)
        if self.out_dir is not None:
            self._append_metrics(row)

    def _validate(self) -> float:
        if not self._val_specs:
            return float("nan")
        contexts, truths = [], []
        for scan_id, spec in self._val_specs:
            sample = extract_sample(self.scans[scan_id].volume, spec)
            contexts.append(sample.context)
            truths.append(sample.patch)
        with no_grad():
            _, p_hat, _ = self.model.generator_forward(Tensor(np.stack(contexts)))
        distances = symmetric_l2_grid(np.stack(truths), p_hat.data)
        return float(distances.mean())

    # -- metrics and checkpoints -------------------------------------------
    def _append_metrics(self, row: dict[str, float]) -> None:
        path = self.out_dir / "metrics.tsv"
        line = "\t".join(
            str(int(row["epoch"])) if col == "epoch" else format(row[col], ".9g") for col in METRIC_COLUMNS
        )
        if not path.exists():
            path.write_text("\t".join(METRIC_COLUMNS) + "\n" + line + "\n")
        else:
            with path.open("a") as handle:
                handle.write(line + "\n")

    def _state_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        for name, p in self.model.all_parameters().items():
            arrays[name] = p.data
        for _, bn in self.model.disc_blocks:
            arrays[f"{bn.name}.running_mean"] = bn.running_mean
            arrays[f"{bn.name}.running_var"] = bn.running_var
            arrays[f"{bn.name}.initialized"] = np.asarray(int(bn.initialized), dtype=np.int64)
        arrays["stats.clip_mean"] = self.model.clip_mean
        arrays["stats.clip_std"] = self.model.clip_std
        arrays["stats.norm_scale"] = np.asarray(self.norm_scale, dtype=np.float64)
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            arrays[f"optim.{tag}.step"] = np.asarray(opt.step_count, dtype=np.int64)
            for name in opt.params:
                arrays[f"optim.{tag}.m.{name}"] = opt._m[name]
                arrays[f"optim.{tag}.v.{name}"] = opt._v[name]
        return arrays

    def save_checkpoint(self, path: str | Path) -> None:
        write_checkpoint(
            path,
            epoch=self.epoch,
            config_text=self.config_text,
            rng_state=self.rng.bit_generator.state,
            arrays=self._state_arrays(),
        )

    def load_checkpoint(self, path: str | Path) -> None:
        ckpt = read_checkpoint(path)
        arrays = ckpt.arrays
        stored_scale = load_model_arrays(self.model, arrays)
        if stored_scale != self.norm_scale:
            self.norm_scale = stored_scale
            for scan_id, scan in self.scans.items():
                source = self._source_volumes[scan_id]
                scan.volume = VectorVolume(
                    (source.vectors / stored_scale).astype(np.float32), source.spacing
                )
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            opt.step_count = int(arrays[f"optim.{tag}.step"])
            for name in opt.params:
                opt._m[name] = arrays[f"optim.{tag}.m.{name}"].astype(opt._m[name].dtype)
                opt._v[name] = arrays[f"optim.{tag}.v.{name}"].astype(opt._v[name].dtype)
        self.rng.bit_generator.state = ckpt.rng_state
        self.epoch = ckpt.epoch

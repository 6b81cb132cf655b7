"""Coarse-to-fine inpainting GAN for orientation-vector patches.

The generator consumes a zero-masked [B, 2n, 2n, 2n, 3] context block.  A
coarse stack predicts a crude [B, n, n, n, 3] patch from the raw context;
that patch is written back into the context center (with gradients stopped,
so the coarse stack trains on its reconstruction term alone) and a fine
stack refines it.  The fine stack ends in two duplicated 1x1x1 heads fed by
the same features: the predicted patch and a per-voxel log-variance.  Patch
predictions from both stages are clamped to k training-set standard
deviations per channel.

The discriminator scores a patch pasted into its context and emits one
probability per batch element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .layers import BatchNorm, Conv3d, Dense


@dataclass(frozen=True)
class ModelConfig:
    n: int = 8
    width: int = 128
    alpha: float = 0.3
    clip_k: float = 5.0
    logvar_min: float = -10.0
    logvar_max: float = 10.0
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99

    def __post_init__(self):
        if self.n < 2 or self.n % 2 != 0:
            raise ContractError(f"patch side must be a positive even integer, got {self.n}")
        if self.width < 4 or self.width % 4 != 0:
            raise ContractError(f"channel width must be a positive multiple of 4, got {self.width}")
        if self.clip_k <= 0:
            raise ContractError(f"clip factor must be positive, got {self.clip_k}")
        if self.logvar_min >= self.logvar_max:
            raise ContractError("log-variance clamp range is empty")


class InpaintingGan:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.width
        n = cfg.n

        self.coarse_layers = [
            Conv3d(3, w, 3, rng=rng, name="coarse.conv1"),
            Conv3d(w, w, 3, rng=rng, name="coarse.conv2"),
            Conv3d(w, w, 3, rng=rng, name="coarse.conv3"),
            Conv3d(w, w // 2, 1, stride=2, rng=rng, name="coarse.down"),
            Conv3d(w // 2, 3, 1, rng=rng, name="coarse.out"),
        ]
        self.fine_trunk = [
            Conv3d(3, w, 3, rng=rng, name="fine.conv1"),
            Conv3d(w, w, 3, rng=rng, name="fine.conv2"),
            Conv3d(w, w, 3, rng=rng, name="fine.conv3"),
            Conv3d(w, w, 3, dilation=2, rng=rng, name="fine.conv4_d2"),
            Conv3d(w, w, 3, dilation=4, rng=rng, name="fine.conv5_d4"),
            Conv3d(w, w // 2, 1, stride=2, rng=rng, name="fine.down"),
        ]
        self.head_mean = Conv3d(w // 2, 3, 1, rng=rng, name="fine.head_mean")
        self.head_logvar = Conv3d(w // 2, 3, 1, rng=rng, name="fine.head_logvar")

        disc_channels = [w // 4, w // 2, w, w, w]
        disc_strides = [1, 2, 2, 1, 1]
        self.disc_blocks = []
        c_in = 3
        for idx, (c_out, stride) in enumerate(zip(disc_channels, disc_strides), start=1):
            conv = Conv3d(c_in, c_out, 3, stride=stride, rng=rng, name=f"disc.conv{idx}")
            bn = BatchNorm(c_out, eps=cfg.bn_eps, momentum=cfg.bn_momentum, name=f"disc.bn{idx}")
            self.disc_blocks.append((conv, bn))
            c_in = c_out
        self.disc_dense = Dense(w * (n // 2) ** 3, 1, rng=rng, name="disc.dense")

        self.clip_mean: np.ndarray | None = None
        self.clip_std: np.ndarray | None = None

    # -- parameter access -------------------------------------------------
    def coarse_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for layer in self.coarse_layers:
            for p in layer.parameters():
                params[p.name] = p
        return params

    def fine_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for layer in [*self.fine_trunk, self.head_mean, self.head_logvar]:
            for p in layer.parameters():
                params[p.name] = p
        return params

    def generator_parameters(self) -> dict[str, Tensor]:
        return {**self.coarse_parameters(), **self.fine_parameters()}

    def discriminator_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for conv, bn in self.disc_blocks:
            for p in conv.parameters() + bn.parameters():
                params[p.name] = p
        for p in self.disc_dense.parameters():
            params[p.name] = p
        return params

    def all_parameters(self) -> dict[str, Tensor]:
        return {**self.generator_parameters(), **self.discriminator_parameters()}

    # -- clip statistics ---------------------------------------------------
    def set_clip_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        """Per-channel mean/std of the training-set vectors; frozen before training."""
        mean = np.asarray(mean, dtype=np.float64)
        std = np.asarray(std, dtype=np.float64)
        if mean.shape != (3,) or std.shape != (3,):
            raise ContractError("clip statistics must be per-channel arrays of shape (3,)")
        if np.any(std <= 0):
            raise ContractError("clip standard deviations must be positive")
        self.clip_mean = mean
        self.clip_std = std

    def clip_bounds(self, dtype) -> tuple[np.ndarray, np.ndarray]:
        if self.clip_mean is None or self.clip_std is None:
            raise ContractError("clip statistics are uninitialized; call set_clip_stats first")
        lo = (self.clip_mean - self.cfg.clip_k * self.clip_std).astype(dtype)
        hi = (self.clip_mean + self.cfg.clip_k * self.clip_std).astype(dtype)
        return lo, hi

    # -- forward passes ----------------------------------------------------
    def generator_forward(self, context: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Return (coarse patch, refined patch, per-voxel log-variance)."""
        cfg = self.cfg
        side = 2 * cfg.n
        expected = (side, side, side, 3)
        if context.data.ndim != 5 or context.data.shape[1:] != expected:
            raise ContractError(
                f"generator expects [B,{side},{side},{side},3] context, got {context.data.shape}"
            )
        lo, hi = self.clip_bounds(context.data.dtype)

        h = context
        for layer in self.coarse_layers:
            h = ad.leaky_relu(layer(h), cfg.alpha)
        coarse = ad.clamp(h, lo, hi)

        fine_input = ad.paste(context, coarse.detach())
        h = fine_input
        for layer in self.fine_trunk:
            h = ad.leaky_relu(layer(h), cfg.alpha)
        p_hat = ad.clamp(ad.leaky_relu(self.head_mean(h), cfg.alpha), lo, hi)
        logvar3 = ad.leaky_relu(self.head_logvar(h), cfg.alpha)
        # Per-voxel scalar log-variance: average the head's channels in log space.
        s = ad.clamp(
            ad.mul(ad.tsum(logvar3, axis=4, keepdims=True), 1.0 / 3.0),
            cfg.logvar_min,
            cfg.logvar_max,
        )
        return coarse, p_hat, s

    def discriminator_forward(
        self, patch: Tensor, context: Tensor, training: bool, update_stats: bool | None = None
    ) -> Tensor:
        """Probability that a patch composed into its context is real, per element."""
        cfg = self.cfg
        side = 2 * cfg.n
        if patch.data.ndim != 5 or patch.data.shape[1:] != (cfg.n, cfg.n, cfg.n, 3):
            raise ContractError(
                f"discriminator expects [B,{cfg.n},{cfg.n},{cfg.n},3] patch, got {patch.data.shape}"
            )
        if context.data.shape != (patch.data.shape[0], side, side, side, 3):
            raise ContractError(
                f"discriminator context shape {context.data.shape} does not match patch batch"
            )
        h = ad.paste(context, patch)
        for conv, bn in self.disc_blocks:
            h = ad.leaky_relu(bn(conv(h), training=training, update_stats=update_stats), cfg.alpha)
        flat = ad.reshape(h, (h.data.shape[0], -1))
        return ad.sigmoid(self.disc_dense(flat))


def training_clip_stats(volumes: list[np.ndarray], masks: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std over the white-matter voxels of the training split."""
    gathered = [vol[mask] for vol, mask in zip(volumes, masks) if mask.any()]
    if not gathered:
        raise ContractError("no white-matter voxels available for clip statistics")
    stacked = np.concatenate(gathered, axis=0).astype(np.float64)
    std = stacked.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return stacked.mean(axis=0), std

"""Training objectives.

The generator balances three pulls: fooling the discriminator
(non-saturating -log D on the refined patch), reconstructing the hidden
patch under a learned per-voxel attenuation (0.5 * exp(-s) * d + 0.5 * s,
where d is the sign-symmetric distance and s the predicted log-variance),
and a plain reconstruction term on the coarse stage.  The discriminator
trains on cross entropy with a one-sided softened real target.

The per-voxel distance d is used unsquared by default; minimizing the
attenuation pair in s then puts the optimum at variance = d.  The
``squared_residual`` switch restores the conventional squared form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, NumericalError


@dataclass(frozen=True)
class LossBreakdown:
    adversarial: float
    reconstruction: float
    variance_penalty: float
    coarse: float
    total: float


def tensor_symmetric_l2(a: Tensor, b: Tensor) -> Tensor:
    """Sign-symmetric distance over trailing 3-vectors, as a graph op.

    Mirrors fields.symmetric_l2_grid operation for operation so values agree
    bitwise with the evaluation metric.
    """
    d_minus = ad.sub(a, b)
    d_plus = ad.add(a, b)
    return ad.minimum(
        ad.sqrt(ad.tsum(ad.mul(d_minus, d_minus), axis=-1)),
        ad.sqrt(ad.tsum(ad.mul(d_plus, d_plus), axis=-1)),
    )


def _require_finite(value: np.ndarray, component: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"generator loss component '{component}' is non-finite")


def generator_loss(
    patch: Tensor,
    p_hat: Tensor,
    s: Tensor,
    d_prob: Tensor,
    coarse: Tensor | None = None,
    coarse_weight: float = 1.0,
    squared_residual: bool = False,
) -> tuple[Tensor, LossBreakdown]:
    """Total generator objective and its per-component breakdown.

    patch/p_hat: [B, n, n, n, 3]; s: [B, n, n, n, 1] log-variance;
    d_prob: [B, 1] discriminator output on the refined patch.
    All terms are means over the batch; the voxel terms sum over the patch.
    """
    if patch.data.shape != p_hat.data.shape:
        raise ContractError(f"patch/prediction shape mismatch: {patch.data.shape} vs {p_hat.data.shape}")
    batch = patch.data.shape[0]
    if s.data.shape != (*patch.data.shape[:-1], 1):
        raise ContractError(f"log-variance must be per-voxel scalar, got {s.data.shape}")
    if d_prob.data.shape != (batch, 1):
        raise ContractError(f"discriminator output must be [B,1], got {d_prob.data.shape}")

    d = tensor_symmetric_l2(patch, p_hat)
    if squared_residual:
        d = ad.mul(d, d)
    s_flat = ad.reshape(s, d.data.shape)

    adversarial = ad.mul(ad.tsum(ad.neg(ad.log(d_prob))), 1.0 / batch)
    reconstruction = ad.mul(ad.tsum(ad.mul(ad.exp(ad.neg(s_flat)), d)), 0.5 / batch)
    variance_penalty = ad.mul(ad.tsum(s_flat), 0.5 / batch)
    total = ad.add(ad.add(adversarial, reconstruction), variance_penalty)

    if coarse is not None:
        if coarse.data.shape != patch.data.shape:
            raise ContractError(f"coarse prediction shape mismatch: {coarse.data.shape}")
        d_coarse = tensor_symmetric_l2(patch, coarse)
        coarse_term = ad.mul(ad.tsum(d_coarse), coarse_weight / batch)
        total = ad.add(total, coarse_term)
        coarse_value = float(coarse_term.data)
    else:
        coarse_value = 0.0

    for name, tensor in (
        ("adversarial", adversarial),
        ("reconstruction", reconstruction),
        ("variance_penalty", variance_penalty),
    ):
        _require_finite(tensor.data, name)
    _require_finite(np.asarray(coarse_value), "coarse")
    _require_finite(total.data, "total")

    breakdown = LossBreakdown(
        adversarial=float(adversarial.data),
        reconstruction=float(reconstruction.data),
        variance_penalty=float(variance_penalty.data),
        coarse=coarse_value,
        total=float(total.data),
    )
    return total, breakdown


def discriminator_loss(real_prob: Tensor, fake_prob: Tensor, smoothing: float = 0.9) -> Tensor:
    """Cross entropy with a softened real target and a hard fake target.

    Real samples are trained toward ``smoothing`` (one-sided smoothing);
    fakes toward 0.  Both terms are batch means.
    """
    if not 0.5 < smoothing <= 1.0:
        raise ContractError(f"label smoothing must lie in (0.5, 1], got {smoothing}")
    real_terms = ad.neg(
        ad.add(
            ad.mul(ad.log(real_prob), smoothing),
            ad.mul(ad.log(ad.sub(1.0, real_prob)), 1.0 - smoothing),
        )
    )
    fake_terms = ad.neg(ad.log(ad.sub(1.0, fake_prob)))
    return ad.add(ad.mean_all(real_terms), ad.mean_all(fake_terms))


def discriminator_accuracy(real_prob: np.ndarray, fake_prob: np.ndarray) -> float:
    """Fraction of correctly separated samples at the 0.5 threshold."""
    correct = float((real_prob > 0.5).sum() + (fake_prob <= 0.5).sum())
    return correct / (real_prob.size + fake_prob.size)

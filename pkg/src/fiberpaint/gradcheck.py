"""Finite-difference verification of every differentiable op.

Each check builds a scalar loss in 64-bit mode, runs one backward pass,
and compares every parameter's gradient against central differences.  An
element passes when the relative error is below 1e-5 or the absolute error
is below 1e-7.  ``run_suite`` covers the individual ops and the fully
composed generator and discriminator objectives on a toy model.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad, precision
from .layers import BatchNorm, conv3d
from .losses import discriminator_loss, generator_loss, tensor_symmetric_l2
from .model import InpaintingGan, ModelConfig

REL_TOL = 1e-5
ABS_TOL = 1e-7
STEP = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    max_abs_error: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: max rel {self.max_rel_error:.3e}, max abs {self.max_abs_error:.3e}"


def numeric_gradient(loss_fn: Callable[[], Tensor], param: Tensor, step: float = STEP) -> np.ndarray:
    """Central finite differences of the scalar loss w.r.t. one tensor."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = loss_fn().item()
            flat[i] = original - step
            f_minus = loss_fn().item()
            flat[i] = original
            flat_grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def compare(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float, bool]:
    """Max relative/absolute error and the pass verdict per the tolerance rule.

    An element passes when its relative error is below REL_TOL or its
    absolute error is below ABS_TOL (the near-zero escape).  The reported
    relative error ignores elements already excused by the absolute bound.
    """
    abs_err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(invalid="ignore", divide="ignore"):
        rel_err = np.where((scale > 0) & (abs_err >= ABS_TOL), abs_err / scale, 0.0)
    ok = np.all(rel_err < REL_TOL)
    return float(rel_err.max(initial=0.0)), float(abs_err.max(initial=0.0)), bool(ok)


def check_gradients(
    name: str,
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = STEP,
    numeric_fn: Callable[[], Tensor] | None = None,
) -> CheckResult:
    """Verify the backward pass of ``loss_fn`` for every listed parameter.

    ``numeric_fn`` overrides the function differenced numerically; the
    composed model check uses it to hold the coarse stage to its own
    reconstruction term, which is the gradient the optimizer acts on.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst_rel, worst_abs, passed = 0.0, 0.0, True
    for p in params.values():
        numeric = numeric_gradient(numeric_fn or loss_fn, p, step)
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        rel, abs_, ok = compare(analytic, numeric)
        worst_rel = max(worst_rel, rel)
        worst_abs = max(worst_abs, abs_)
        passed = passed and ok
    return CheckResult(name=name, max_rel_error=worst_rel, max_abs_error=worst_abs, passed=passed)


def _away_from(values: np.ndarray, point: float, margin: float) -> np.ndarray:
    """Nudge entries within ``margin`` of a kink away from it."""
    shifted = values.copy()
    close = np.abs(shifted - point) < margin
    shifted[close] = point + margin * np.sign(shifted[close] - point + 0.5 * margin)
    return shifted


def _elementwise_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    x = Tensor(_away_from(rng.normal(size=(3, 4)), 0.0, 1e-3), requires_grad=True, name="x")
    y = Tensor(_away_from(rng.normal(size=(3, 4)), 0.0, 1e-3), requires_grad=True, name="y")
    proj = Tensor(rng.normal(size=(3, 4)))

    results.append(
        check_gradients(
            "arithmetic(add,sub,mul,neg,sum)",
            lambda: ad.tsum(ad.mul(ad.sub(ad.add(x, y), ad.neg(ad.mul(x, y))), proj)),
            {"x": x, "y": y},
        )
    )
    positive = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True, name="pos")
    results.append(
        check_gradients(
            "transcendental(exp,log,sqrt)",
            lambda: ad.tsum(ad.mul(ad.add(ad.exp(ad.mul(x, 0.3)), ad.add(ad.log(positive), ad.sqrt(positive))), proj)),
            {"x": x, "pos": positive},
        )
    )
    # Keep the two branches separated so finite differences never cross the tie.
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
    b = Tensor(a.data + np.where(rng.random((3, 4)) < 0.5, 1.0, -1.0), requires_grad=True, name="b")
    results.append(
        check_gradients("minimum", lambda: ad.tsum(ad.mul(ad.minimum(a, b), proj)), {"a": a, "b": b})
    )
    wide = Tensor(rng.uniform(-3.0, 3.0, size=(3, 4)), requires_grad=True, name="wide")
    wide.data = _away_from(_away_from(wide.data, -1.0, 1e-3), 1.0, 1e-3)
    results.append(
        check_gradients(
            "clamp", lambda: ad.tsum(ad.mul(ad.clamp(wide, -1.0, 1.0), proj)), {"wide": wide}
        )
    )
    results.append(
        check_gradients("leaky_relu", lambda: ad.tsum(ad.mul(ad.leaky_relu(x, 0.3), proj)), {"x": x})
    )
    moderate = Tensor(rng.uniform(-4.0, 4.0, size=(3, 4)), requires_grad=True, name="m")
    results.append(
        check_gradients("sigmoid", lambda: ad.tsum(ad.mul(ad.sigmoid(moderate), proj)), {"m": moderate})
    )
    return results


def _structural_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    w = Tensor(rng.normal(size=(6, 2)) * 0.5, requires_grad=True, name="w")
    bias = Tensor(rng.normal(size=(2,)) * 0.1, requires_grad=True, name="b")
    xin = Tensor(rng.normal(size=(3, 6)), requires_grad=True, name="xin")
    proj = Tensor(rng.normal(size=(3, 2)))
    results.append(
        check_gradients(
            "dense", lambda: ad.tsum(ad.mul(ad.linear(xin, w, bias), proj)), {"x": xin, "w": w, "b": bias}
        )
    )
    ctx = Tensor(rng.normal(size=(2, 4, 4, 4, 2)), requires_grad=True, name="ctx")
    patch = Tensor(rng.normal(size=(2, 2, 2, 2, 2)), requires_grad=True, name="patch")
    proj5 = Tensor(rng.normal(size=(2, 4, 4, 4, 2)))
    results.append(
        check_gradients(
            "paste+reshape",
            lambda: ad.tsum(ad.mul(ad.reshape(ad.paste(ctx, patch), (2, -1)), ad.reshape(proj5, (2, -1)))),
            {"ctx": ctx, "patch": patch},
        )
    )
    va = Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="va")
    vb = Tensor(rng.normal(size=(5, 3)), requires_grad=True, name="vb")
    projd = Tensor(rng.normal(size=(5,)))
    results.append(
        check_gradients(
            "sign_symmetric_distance",
            lambda: ad.tsum(ad.mul(tensor_symmetric_l2(va, vb), projd)),
            {"va": va, "vb": vb},
        )
    )
    return results


def _conv_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    configs = [
        ("conv3d(k3,s1,d1)", 3, 1, 1, (1, 4, 4, 4, 2)),
        ("conv3d(k3,s2,d1)", 3, 2, 1, (1, 5, 5, 5, 2)),
        ("conv3d(k3,s1,d2)", 3, 1, 2, (1, 5, 5, 5, 2)),
        ("conv3d(k3,s2,d4)", 3, 2, 4, (1, 6, 6, 6, 1)),
        ("conv3d(k1,s2,d1)", 1, 2, 1, (1, 4, 4, 4, 2)),
    ]
    for name, k, stride, dilation, shape in configs:
        c_in = shape[4]
        c_out = 2
        x = Tensor(rng.normal(size=shape), requires_grad=True, name="x")
        w = Tensor(rng.normal(size=(k, k, k, c_in, c_out)) * 0.4, requires_grad=True, name="w")
        bias = Tensor(rng.normal(size=(c_out,)) * 0.1, requires_grad=True, name="b")
        out_shape = tuple(-(-e // stride) for e in shape[1:4])
        proj = Tensor(rng.normal(size=(shape[0], *out_shape, c_out)))
        results.append(
            check_gradients(
                name,
                lambda x=x, w=w, bias=bias, s=stride, d=dilation, p=proj: ad.tsum(
                    ad.mul(conv3d(x, w, bias, s, d), p)
                ),
                {"x": x, "w": w, "b": bias},
            )
        )
    return results


def _batch_norm_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    bn = BatchNorm(3)
    bn.gamma.data = rng.normal(size=3) * 0.4 + 1.0
    bn.beta.data = rng.normal(size=3) * 0.2
    x = Tensor(rng.normal(size=(4, 3, 3, 3)) * 1.5 + 0.5, requires_grad=True, name="x")
    proj = Tensor(rng.normal(size=(4, 3, 3, 3)))
    results.append(
        check_gradients(
            "batch_norm(train)",
            lambda: ad.tsum(ad.mul(bn(x, training=True, update_stats=False), proj)),
            {"x": x, "gamma": bn.gamma, "beta": bn.beta},
        )
    )
    _ = bn(x, training=True)  # seed the running statistics
    results.append(
        check_gradients(
            "batch_norm(eval)",
            lambda: ad.tsum(ad.mul(bn(x, training=False), proj)),
            {"x": x, "gamma": bn.gamma, "beta": bn.beta},
        )
    )
    return results


def _toy_model(rng: np.random.Generator) -> tuple[InpaintingGan, Tensor, Tensor]:
    cfg = ModelConfig(n=2, width=4)
    model = InpaintingGan(cfg, rng)
    model.set_clip_stats(np.zeros(3), np.full(3, 10.0))  # wide bounds: clamp checked separately
    for _, bn in model.disc_blocks:
        bn.gamma.data = bn.gamma.data + rng.normal(size=bn.gamma.data.shape) * 0.2
        bn.beta.data = bn.beta.data + rng.normal(size=bn.beta.data.shape) * 0.1
    context = Tensor(rng.normal(size=(2, 4, 4, 4, 3)) * 0.8)
    context.data[:, 1:3, 1:3, 1:3, :] = 0
    truth = Tensor(rng.normal(size=(2, 2, 2, 2, 3)) * 0.8)
    return model, context, truth


def _composed_checks(rng: np.random.Generator) -> list[CheckResult]:
    results = []
    model, context, truth = _toy_model(rng)
    alpha = model.cfg.alpha
    lo, hi = model.clip_bounds(context.data.dtype)

    def full_generator_loss() -> Tensor:
        coarse, p_hat, s = model.generator_forward(context)
        d_prob = model.discriminator_forward(p_hat, context, training=True, update_stats=False)
        total, _ = generator_loss(truth, p_hat, s, d_prob, coarse)
        return total

    def coarse_term_only() -> Tensor:
        # The coarse stage is pasted into the fine input behind a stop
        # gradient, so its training gradient is exactly this term's.
        h = context
        for layer in model.coarse_layers:
            h = ad.leaky_relu(layer(h), alpha)
        coarse = ad.clamp(h, lo, hi)
        batch = truth.data.shape[0]
        return ad.mul(ad.tsum(tensor_symmetric_l2(truth, coarse)), 1.0 / batch)

    results.append(
        check_gradients(
            "composed_generator_loss(fine+heads+disc)",
            full_generator_loss,
            {**model.fine_parameters(), **model.discriminator_parameters()},
        )
    )
    results.append(
        check_gradients(
            "composed_generator_loss(coarse_path)",
            full_generator_loss,
            model.coarse_parameters(),
            numeric_fn=coarse_term_only,
        )
    )

    with no_grad():
        _, fake, _ = model.generator_forward(context)
    fake_const = Tensor(fake.data)

    def full_discriminator_loss() -> Tensor:
        real_prob = model.discriminator_forward(truth, context, training=True, update_stats=False)
        fake_prob = model.discriminator_forward(fake_const, context, training=True, update_stats=False)
        return discriminator_loss(real_prob, fake_prob, 0.9)

    results.append(
        check_gradients(
            "composed_discriminator_loss", full_discriminator_loss, model.discriminator_parameters()
        )
    )
    return results


def run_suite(composed: bool = True, seed: int = 20240) -> tuple[list[CheckResult], float]:
    """All gradient checks in 64-bit mode; returns results and wall time."""
    start = time.perf_counter()
    results: list[CheckResult] = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        results.extend(_elementwise_checks(rng))
        results.extend(_structural_checks(rng))
        results.extend(_conv_checks(rng))
        results.extend(_batch_norm_checks(rng))
        if composed:
            results.extend(_composed_checks(rng))
    return results, time.perf_counter() - start

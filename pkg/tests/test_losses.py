import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from fiberpaint.autodiff import Tensor
from fiberpaint.errors import ContractError, NumericalError
from fiberpaint.fields import symmetric_l2_grid
from fiberpaint.losses import (
    discriminator_accuracy,
    discriminator_loss,
    generator_loss,
    tensor_symmetric_l2,
)


def _single_voxel(p, p_hat, s_value, prob, dtype=np.float32):
    patch = Tensor(np.asarray(p, dtype=dtype).reshape(1, 1, 1, 1, 3))
    pred = Tensor(np.asarray(p_hat, dtype=dtype).reshape(1, 1, 1, 1, 3))
    s = Tensor(np.full((1, 1, 1, 1, 1), s_value, dtype=dtype))
    d_prob = Tensor(np.full((1, 1), prob, dtype=dtype))
    return patch, pred, s, d_prob


class TestGeneratorLoss:
    def test_hand_evaluated_single_voxel(self):
        # d = 2, s = 0 (unit variance), D output 0.5, coarse term off
        patch, pred, s, d_prob = _single_voxel((2, 0, 0), (0, 0, 0), 0.0, 0.5)
        total, bd = generator_loss(patch, pred, s, d_prob)
        assert bd.adversarial == pytest.approx(-np.log(0.5), rel=1e-6)
        assert bd.reconstruction == pytest.approx(1.0, rel=1e-6)
        assert bd.variance_penalty == 0.0
        assert bd.coarse == 0.0
        assert bd.total == pytest.approx(1.6931472, rel=1e-5)

    def test_sign_flipped_prediction_zeroes_reconstruction(self):
        patch, pred, s, d_prob = _single_voxel((0.4, -0.2, 0.6), (-0.4, 0.2, -0.6), 0.0, 0.5)
        _, bd = generator_loss(patch, pred, s, d_prob)
        assert bd.reconstruction == 0.0

    def test_zero_logvar_reconstruction_equals_half_distance_sum_bitwise(self):
        rng = np.random.default_rng(0)
        truth = rng.normal(size=(1, 4, 4, 4, 3)).astype(np.float32)
        pred = rng.normal(size=(1, 4, 4, 4, 3)).astype(np.float32)
        patch, p_hat = Tensor(truth), Tensor(pred)
        s = Tensor(np.zeros((1, 4, 4, 4, 1), dtype=np.float32))
        d_prob = Tensor(np.full((1, 1), 0.5, dtype=np.float32))
        _, bd = generator_loss(patch, p_hat, s, d_prob)
        expected = np.sum(symmetric_l2_grid(truth, pred)) * np.float32(0.5)
        assert np.float32(bd.reconstruction) == expected

    def test_minimizing_over_logvar_recovers_log_distance(self):
        # 64-bit evaluation; float32 quantization would dominate the 1e-4 bar
        for d in (0.25, 1.0, 4.0, 9.0):
            def objective(s_value: float) -> float:
                patch, pred, s, d_prob = _single_voxel((d, 0, 0), (0, 0, 0), s_value, 0.5, np.float64)
                _, bd = generator_loss(patch, pred, s, d_prob)
                return bd.reconstruction + bd.variance_penalty
            result = minimize_scalar(objective, bounds=(-9.0, 9.0), method="bounded", options={"xatol": 1e-6})
            assert result.x == pytest.approx(np.log(d), abs=1e-4)

    def test_total_invariant_to_ground_truth_sign_flips(self):
        rng = np.random.default_rng(1)
        truth = rng.normal(size=(2, 4, 4, 4, 3)).astype(np.float32)
        pred = Tensor(rng.normal(size=(2, 4, 4, 4, 3)).astype(np.float32))
        coarse = Tensor(rng.normal(size=(2, 4, 4, 4, 3)).astype(np.float32))
        s = Tensor(rng.normal(size=(2, 4, 4, 4, 1)).astype(np.float32))
        d_prob = Tensor(np.full((2, 1), 0.7, dtype=np.float32))
        flips = np.where(rng.random((2, 4, 4, 4)) < 0.5, -1.0, 1.0).astype(np.float32)
        total_a, bd_a = generator_loss(Tensor(truth), pred, s, d_prob, coarse)
        total_b, bd_b = generator_loss(Tensor(truth * flips[..., None]), pred, s, d_prob, coarse)
        assert total_a.data == total_b.data
        assert bd_a.reconstruction == bd_b.reconstruction
        assert bd_a.coarse == bd_b.coarse

    def test_breakdown_total_is_component_sum(self):
        rng = np.random.default_rng(2)
        patch = Tensor(rng.normal(size=(2, 2, 2, 2, 3)).astype(np.float32))
        pred = Tensor(rng.normal(size=(2, 2, 2, 2, 3)).astype(np.float32))
        coarse = Tensor(rng.normal(size=(2, 2, 2, 2, 3)).astype(np.float32))
        s = Tensor(rng.normal(size=(2, 2, 2, 2, 1)).astype(np.float32))
        d_prob = Tensor(np.full((2, 1), 0.4, dtype=np.float32))
        _, bd = generator_loss(patch, pred, s, d_prob, coarse, coarse_weight=0.5)
        assert bd.total == pytest.approx(
            bd.adversarial + bd.reconstruction + bd.variance_penalty + bd.coarse, rel=1e-6
        )

    def test_squared_residual_switch(self):
        patch, pred, s, d_prob = _single_voxel((2, 0, 0), (0, 0, 0), 0.0, 0.5)
        _, bd = generator_loss(patch, pred, s, d_prob, squared_residual=True)
        assert bd.reconstruction == pytest.approx(2.0, rel=1e-6)  # 0.5 * d^2 = 0.5 * 4

    def test_nonfinite_component_raises_with_name(self):
        patch, pred, s, d_prob = _single_voxel((1, 0, 0), (0, 0, 0), 0.0, 0.5)
        s.data[...] = 200.0  # exp(-s) fine, but penalty finite; use inf directly
        s.data[...] = np.inf
        with pytest.raises(NumericalError, match="variance_penalty"):
            with np.errstate(invalid="ignore", over="ignore"):
                generator_loss(patch, pred, s, d_prob)

    def test_shape_contracts(self):
        patch, pred, s, d_prob = _single_voxel((1, 0, 0), (0, 0, 0), 0.0, 0.5)
        with pytest.raises(ContractError):
            generator_loss(patch, Tensor(np.zeros((1, 2, 2, 2, 3), dtype=np.float32)), s, d_prob)
        with pytest.raises(ContractError):
            generator_loss(patch, pred, Tensor(np.zeros((1, 1, 1, 1, 3), dtype=np.float32)), d_prob)
        with pytest.raises(ContractError):
            generator_loss(patch, pred, s, Tensor(np.zeros((2, 1), dtype=np.float32)))


class TestDiscriminatorLoss:
    def test_real_term_minimized_at_smoothing_target(self):
        fake = Tensor(np.full((1, 1), 0.5, dtype=np.float32))
        probes = np.linspace(0.01, 0.99, 197)
        losses = []
        for q in probes:
            real = Tensor(np.full((1, 1), q, dtype=np.float32))
            losses.append(float(discriminator_loss(real, fake, 0.9).data))
        best = probes[int(np.argmin(losses))]
        assert best == pytest.approx(0.9, abs=0.01)

    def test_fake_term_vanishes_as_fake_probability_vanishes(self):
        real = Tensor(np.full((1, 1), 0.9, dtype=np.float32))
        tiny = Tensor(np.full((1, 1), 1e-7, dtype=np.float32))
        moderate = Tensor(np.full((1, 1), 0.3, dtype=np.float32))
        base = float(discriminator_loss(real, tiny, 0.9).data)
        worse = float(discriminator_loss(real, moderate, 0.9).data)
        fixed_real = -(0.9 * np.log(0.9) + 0.1 * np.log(0.1))
        assert base == pytest.approx(fixed_real, abs=1e-5)
        assert worse > base

    def test_smoothing_one_is_standard_cross_entropy(self):
        rng = np.random.default_rng(3)
        real = Tensor(rng.uniform(0.1, 0.9, size=(8, 1)).astype(np.float32))
        fake = Tensor(rng.uniform(0.1, 0.9, size=(8, 1)).astype(np.float32))
        loss = float(discriminator_loss(real, fake, 1.0).data)
        expected = float((-np.log(real.data)).mean() + (-np.log(1.0 - fake.data)).mean())
        assert loss == pytest.approx(expected, rel=1e-6)

    def test_smoothing_range_enforced(self):
        probs = Tensor(np.full((2, 1), 0.5, dtype=np.float32))
        with pytest.raises(ContractError):
            discriminator_loss(probs, probs, 0.5)
        with pytest.raises(ContractError):
            discriminator_loss(probs, probs, 1.1)


def test_discriminator_accuracy_counts_threshold_crossings():
    real = np.array([0.9, 0.4])
    fake = np.array([0.2, 0.7])
    assert discriminator_accuracy(real, fake) == pytest.approx(0.5)


def test_tensor_distance_matches_grid_bitwise():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(3, 5, 3)).astype(np.float32)
    b = rng.normal(size=(3, 5, 3)).astype(np.float32)
    via_tensor = tensor_symmetric_l2(Tensor(a), Tensor(b)).data
    via_grid = symmetric_l2_grid(a, b)
    assert np.array_equal(via_tensor, via_grid)

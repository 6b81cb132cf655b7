import numpy as np
import pytest

from fiberpaint.autodiff import Tensor
from fiberpaint.errors import NumericalError
from fiberpaint.optim import Adam


def _param(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float32), requires_grad=True, name="p")


def test_zero_gradient_leaves_parameter_unchanged():
    p = _param([1.0, -2.0])
    opt = Adam({"p": p}, lr=1e-2)
    p.grad = np.zeros_like(p.data)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)


def test_constant_gradient_step_approaches_learning_rate():
    p = _param([0.0])
    lr = 1e-3
    opt = Adam({"p": p}, lr=lr)
    for _ in range(200):
        p.grad = np.array([0.5], dtype=np.float32)
        prev = p.data.copy()
        opt.step()
    step = abs(float(p.data[0] - prev[0]))
    assert step == pytest.approx(lr, rel=1e-3)


def test_quadratic_bowl_descends_monotonically():
    p = _param([1.0])
    opt = Adam({"p": p}, lr=1e-3)
    losses = []
    for _ in range(10):
        losses.append(float(p.data[0] ** 2))
        p.grad = (2.0 * p.data).astype(np.float32)
        opt.step()
    losses.append(float(p.data[0] ** 2))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_nonfinite_gradient_names_the_parameter():
    p = _param([1.0])
    p.name = "coarse.conv1.weight"
    opt = Adam({"coarse.conv1.weight": p})
    p.grad = np.array([np.nan], dtype=np.float32)
    with pytest.raises(NumericalError, match="coarse.conv1.weight"):
        opt.step()


def test_moment_accumulators_match_parameter_shapes():
    params = {"a": _param(np.zeros((2, 3))), "b": _param(np.zeros(5))}
    opt = Adam(params)
    for name, p in params.items():
        assert opt._m[name].shape == p.data.shape
        assert opt._v[name].shape == p.data.shape


def test_step_counter_increments_by_one():
    p = _param([1.0])
    opt = Adam({"p": p})
    assert opt.step_count == 0
    for expected in (1, 2, 3):
        p.grad = np.array([0.1], dtype=np.float32)
        opt.step()
        assert opt.step_count == expected


def test_state_roundtrip():
    p = _param([1.0])
    opt = Adam({"p": p}, lr=1e-2)
    p.grad = np.array([0.3], dtype=np.float32)
    opt.step()
    state = opt.state_dict()
    q = _param([1.0])
    opt2 = Adam({"p": q}, lr=1e-2)
    opt2.load_state_dict(state)
    assert opt2.step_count == 1
    assert np.array_equal(opt2._m["p"], opt._m["p"])
    assert np.array_equal(opt2._v["p"], opt._v["p"])

"""Network building blocks: 3D convolution, batch normalization, dense layer.

Tensors are laid out channel-last: [batch, x, y, z, channel].  Convolutions
use "same" zero padding, so every spatial extent maps to ceil(extent /
stride).  The fast convolution path gathers one strided slice per kernel
offset and reduces it with a channel matmul; the naive nested-loop oracle it
is tested against lives in the test suite.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from .autodiff import Tensor, _accum, default_dtype
from .errors import ContractError


def same_pad(extent: int, kernel: int, stride: int, dilation: int) -> tuple[int, int, int]:
    """Output extent and (before, after) zero padding for one axis."""
    out = -(-extent // stride)
    effective = (kernel - 1) * dilation + 1
    total = max((out - 1) * stride + effective - extent, 0)
    before = total // 2
    return out, before, total - before


def conv3d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Linear 3D convolution with same padding.

    x: [N, X, Y, Z, Cin], weight: [K, K, K, Cin, Cout], bias: [Cout].
    """
    if x.data.ndim != 5:
        raise ContractError(f"conv3d expects a 5-d input, got shape {x.data.shape}")
    if weight.data.ndim != 5 or len({weight.data.shape[0], weight.data.shape[1], weight.data.shape[2]}) != 1:
        raise ContractError(f"conv3d weights must be [K,K,K,Cin,Cout], got {weight.data.shape}")
    k = weight.data.shape[0]
    if k % 2 != 1:
        raise ContractError(f"kernel size must be odd, got {k}")
    if weight.data.shape[3] != x.data.shape[4]:
        raise ContractError(
            f"weights expect {weight.data.shape[3]} input channels, input has {x.data.shape[4]}"
        )
    c_out = weight.data.shape[4]
    if bias.data.shape != (c_out,):
        raise ContractError(f"bias must have shape ({c_out},), got {bias.data.shape}")
    if stride < 1 or dilation < 1:
        raise ContractError("stride and dilation must be positive")

    n_batch = x.data.shape[0]
    c_in = x.data.shape[4]
    spatial = x.data.shape[1:4]
    outs, befores = [], []
    for extent in spatial:
        out_e, before, after = same_pad(extent, k, stride, dilation)
        outs.append(out_e)
        befores.append((before, after))
    pad_spec = [(0, 0)] + befores + [(0, 0)]
    padded = np.pad(x.data, pad_spec) if any(b or a for b, a in befores) else x.data

    offsets = [
        (
            slice(None),
            slice(i * dilation, i * dilation + (outs[0] - 1) * stride + 1, stride),
            slice(j * dilation, j * dilation + (outs[1] - 1) * stride + 1, stride),
            slice(l * dilation, l * dilation + (outs[2] - 1) * stride + 1, stride),
            slice(None),
        )
        for i, j, l in product(range(k), repeat=3)
    ]

    n_out = n_batch * outs[0] * outs[1] * outs[2]
    w_matrix = weight.data.reshape(k**3 * c_in, c_out)
    if k == 1:
        columns = padded[offsets[0]].reshape(n_out, c_in)
    else:
        gathered = np.stack([padded[sl] for sl in offsets], axis=4)  # [N,X',Y',Z',K^3,Cin]
        columns = gathered.reshape(n_out, k**3 * c_in)
    result = (columns @ w_matrix + bias.data).reshape(n_batch, *outs, c_out)

    def backward():
        g = out.grad.reshape(n_out, c_out)
        if x.requires_grad:
            g_columns = (g @ w_matrix.T).reshape(n_batch, *outs, k**3, c_in)
            g_padded = np.zeros_like(padded)
            for o_idx, sl in enumerate(offsets):
                g_padded[sl] += g_columns[:, :, :, :, o_idx, :]
            crop = (slice(None),) + tuple(
                slice(before, before + extent) for (before, _), extent in zip(befores, spatial)
            ) + (slice(None),)
            _accum(x, g_padded[crop])
        if weight.requires_grad:
            _accum(weight, (columns.T @ g).reshape(weight.data.shape))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=0))

    out = Tensor._op(result, (x, weight, bias), backward)
    return out


def init_he_normal(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, name: str = "") -> Tensor:
    """Normal draw with variance 2 / fan_in."""
    if fan_in <= 0:
        raise ContractError("fan_in must be positive")
    data = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(default_dtype())
    return Tensor(data, requires_grad=True, name=name)


def init_glorot_uniform(
    shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator, name: str = ""
) -> Tensor:
    """Uniform draw on +/- sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ContractError("fan_in and fan_out must be positive")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    data = rng.uniform(-limit, limit, size=shape).astype(default_dtype())
    return Tensor(data, requires_grad=True, name=name)


class Conv3d:
    """Convolution layer owning a he-normal kernel and a zero bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        dilation: int = 1,
        rng: np.random.Generator | None = None,
        name: str = "conv",
    ):
        self.stride = stride
        self.dilation = dilation
        shape = (kernel, kernel, kernel, in_channels, out_channels)
        self.weight = init_he_normal(shape, kernel**3 * in_channels, rng, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_channels, dtype=default_dtype()), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.stride, self.dilation)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class Dense:
    """Fully connected layer with a glorot-uniform kernel and a zero bias."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, name: str = "dense"):
        self.weight = init_glorot_uniform(
            (in_features, out_features), in_features, out_features, rng, name=f"{name}.weight"
        )
        self.bias = Tensor(np.zeros(out_features, dtype=default_dtype()), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        from .autodiff import linear

        return linear(x, self.weight, self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


class BatchNorm:
    """Per-channel normalization over the trailing axis.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running averages by exponential moving average starting
    from (0, 1).  Eval mode uses the running averages and errors if no
    train-mode update ever happened.
    """

    def __init__(self, channels: int, eps: float = 1e-3, momentum: float = 0.99, name: str = "bn"):
        self.name = name
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=default_dtype()), requires_grad=True, name=f"{name}.gamma")
        self.beta = Tensor(np.zeros(channels, dtype=default_dtype()), requires_grad=True, name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())
        self.initialized = False

    def __call__(self, x: Tensor, training: bool, update_stats: bool | None = None) -> Tensor:
        if x.data.shape[-1] != self.gamma.data.shape[0]:
            raise ContractError(
                f"batch_norm expects {self.gamma.data.shape[0]} channels, got {x.data.shape[-1]}"
            )
        if training:
            if x.data.shape[0] < 2:
                raise ContractError("batch_norm train mode requires batch size >= 2")
            return self._train_forward(x, update_stats if update_stats is not None else True)
        if not self.initialized:
            raise ContractError("batch_norm eval mode before any train-mode update (uninitialized statistics)")
        return self._eval_forward(x)

    def _train_forward(self, x: Tensor, update_stats: bool) -> Tensor:
        gamma, beta = self.gamma, self.beta
        axes = tuple(range(x.data.ndim - 1))
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update_stats:
            m = self.momentum
            self.running_mean = (m * self.running_mean + (1.0 - m) * mean).astype(x.data.dtype)
            self.running_var = (m * self.running_var + (1.0 - m) * var).astype(x.data.dtype)
            self.initialized = True
        centered = x.data - mean
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = centered * inv_std
        n_reduced = x.data.size // x.data.shape[-1]

        def backward():
            g = out.grad
            _accum(gamma, (g * x_hat).sum(axis=axes))
            _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                d_hat = g * gamma.data
                d_var = (d_hat * centered).sum(axis=axes) * (-0.5) * inv_std**3
                d_mean = -(d_hat.sum(axis=axes)) * inv_std
                _accum(x, d_hat * inv_std + centered * (2.0 * d_var / n_reduced) + d_mean / n_reduced)

        out = Tensor._op(x_hat * gamma.data + beta.data, (x, gamma, beta), backward)
        return out

    def _eval_forward(self, x: Tensor) -> Tensor:
        gamma, beta = self.gamma, self.beta
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        x_hat = (x.data - self.running_mean) * inv_std

        def backward():
            g = out.grad
            axes = tuple(range(x.data.ndim - 1))
            _accum(gamma, (g * x_hat).sum(axis=axes))
            _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                _accum(x, g * (gamma.data * inv_std))

        out = Tensor._op(x_hat * gamma.data + beta.data, (x, gamma, beta), backward)
        return out

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]

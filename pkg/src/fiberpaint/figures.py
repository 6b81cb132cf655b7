"""Map rendering: portable graymaps for exact byte-level inspection and
matplotlib figures for the evaluation report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ContractError

AXES = {"x": 0, "y": 1, "z": 2}


def take_slice(grid: np.ndarray, axis: str, index: int) -> np.ndarray:
    """2D slice of a 3D grid; absent voxels are NaN."""
    if axis not in AXES:
        raise ContractError(f"axis must be one of x, y, z; got {axis!r}")
    a = AXES[axis]
    if not 0 <= index < grid.shape[a]:
        raise ContractError(f"slice index {index} out of range [0, {grid.shape[a]}) on axis {axis}")
    return np.take(grid, index, axis=a)


def render_pgm_bytes(slice2d: np.ndarray) -> bytes:
    """Binary P5 graymap of one slice.

    Present voxels are min-max scaled over the slice and truncated to a
    byte; a constant slice renders mid-gray (127); absent (NaN) voxels
    render black.
    """
    values = np.asarray(slice2d, dtype=np.float64)
    present = np.isfinite(values)
    pixels = np.zeros(values.shape, dtype=np.uint8)
    if present.any():
        v_min = values[present].min()
        v_max = values[present].max()
        if v_max > v_min:
            scaled = (values[present] - v_min) / (v_max - v_min) * 255.0
            pixels[present] = scaled.astype(np.uint8)
        else:
            pixels[present] = 127
    height, width = values.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path, slice2d: np.ndarray) -> None:
    Path(path).write_bytes(render_pgm_bytes(slice2d))


def save_map_figure(path, slice2d: np.ndarray, title: str, value_label: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    masked = np.ma.masked_invalid(np.asarray(slice2d, dtype=np.float64))
    cmap = matplotlib.colormaps["viridis"].copy()
    cmap.set_bad("black")
    image = ax.imshow(masked.T, origin="lower", cmap=cmap, interpolation="nearest")
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.colorbar(image, ax=ax, label=value_label)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_calibration_figure(path, mean_variance: np.ndarray, mean_error: np.ndarray, r: float, p: float) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(mean_variance, mean_error, s=12, alpha=0.5, edgecolors="none")
    if len(mean_variance) >= 2 and np.ptp(mean_variance) > 0:
        slope, intercept = np.polyfit(mean_variance, mean_error, 1)
        xs = np.linspace(float(np.min(mean_variance)), float(np.max(mean_variance)), 50)
        ax.plot(xs, slope * xs + intercept, color="crimson", linewidth=1.5)
    ax.set_xlabel("patch mean predicted variance")
    ax.set_ylabel("patch mean sign-symmetric error")
    ax.set_title(f"calibration: r = {r:.3f}, p = {p:.2e}")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_training_curve(path, history: list[dict[str, float]]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in history]
    ax.plot(epochs, [row["val-error"] for row in history], label="validation error")
    ax.plot(epochs, [row["reconstruction"] for row in history], label="reconstruction", alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("value")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)

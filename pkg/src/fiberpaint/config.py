"""Flat key=value run configuration.

A config file is UTF-8 text, one ``section.key = value`` assignment per
line, with ``#`` comments.  Unknown keys are rejected so typos never pass
silently.  Every key with its default and meaning is listed in the CLI
help.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError

ENV_CONFIG = "FIBERPAINT_CONFIG"

# key -> (default, help)
DEFAULTS: dict[str, tuple[object, str]] = {
    "phantom.count": (60, "number of phantom scans in the cohort"),
    "phantom.dim": (32, "cubic volume side length in voxels"),
    "phantom.magnitude": (1.0, "vector magnitude inside bundles"),
    "phantom.angular_jitter_deg": (5.0, "std of the per-voxel angular jitter (degrees)"),
    "phantom.magnitude_jitter": (0.05, "relative std of the per-voxel magnitude jitter"),
    "phantom.crossing_weight": (0.5, "probability the first bundle wins a crossing voxel"),
    "phantom.dispersion_half_angle_deg": (30.0, "fan half-angle in dispersion regions (degrees)"),
    "phantom.background_rel": (0.005, "background vector magnitude relative to bundles"),
    "split.train": (442.0 / 630.0, "training fraction of the cohort"),
    "split.val": (94.0 / 630.0, "validation fraction of the cohort"),
    "split.test": (94.0 / 630.0, "test fraction of the cohort"),
    "model.n": (8, "patch side length in voxels (context side is 2n)"),
    "model.width": (128, "channel width of the main convolution stacks"),
    "model.alpha": (0.3, "negative slope of all leaky ReLU activations"),
    "model.clip_k": (5.0, "patch outputs clamp to k training-set stds around the mean"),
    "model.logvar_min": (-10.0, "lower clamp of the predicted log-variance"),
    "model.logvar_max": (10.0, "upper clamp of the predicted log-variance"),
    "model.bn_eps": (1e-3, "batch-norm epsilon"),
    "model.bn_momentum": (0.99, "batch-norm running-average momentum"),
    "train.batch_size": (32, "samples per update batch (minimum 2)"),
    "train.epochs": (300, "training epochs (one patch per scan per epoch)"),
    "train.lr": (1e-4, "learning rate for both optimizers"),
    "train.beta1": (0.9, "first-moment decay"),
    "train.beta2": (0.999, "second-moment decay"),
    "train.adam_eps": (1e-8, "optimizer epsilon"),
    "train.smoothing": (0.9, "one-sided label-smoothing target for real samples"),
    "train.seed": (0, "master seed; the --seed flag overrides it"),
    "train.coarse_weight": (1.0, "weight of the coarse reconstruction term"),
    "train.squared_residual": (False, "square the sign-symmetric residual in the loss"),
    "train.sign_augment": (True, "re-randomize vector signs per sample each epoch"),
    "train.checkpoint_every": (50, "checkpoint cadence in epochs"),
    "eval.stride": (2, "patch lattice stride for whole-volume evaluation"),
    "eval.batch": (64, "forward batch size during evaluation"),
    "mask.rel_threshold": (0.1, "white-matter cutoff as a fraction of the p99 magnitude"),
}


def _parse_value(key: str, text: str, default: object):
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ContractError(f"config key '{key}' expects a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ContractError(f"config key '{key}' expects a {type(default).__name__}, got {text!r}") from None
    return text


def parse_config_text(text: str) -> dict[str, object]:
    values = {key: default for key, (default, _) in DEFAULTS.items()}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ContractError(f"config line {line_no} is not a key=value assignment: {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in DEFAULTS:
            raise ContractError(f"unknown config key '{key}' (line {line_no})")
        values[key] = _parse_value(key, raw, DEFAULTS[key][0])
    return values


@dataclass(frozen=True)
class RunConfig:
    values: dict[str, object]

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self) -> str:
        """Canonical serialization; embedded in checkpoints and phantom dirs."""
        return "\n".join(f"{key} = {_format_value(self.values[key])}" for key in DEFAULTS) + "\n"

    def model_config(self):
        from .model import ModelConfig

        v = self.values
        return ModelConfig(
            n=v["model.n"],
            width=v["model.width"],
            alpha=v["model.alpha"],
            clip_k=v["model.clip_k"],
            logvar_min=v["model.logvar_min"],
            logvar_max=v["model.logvar_max"],
            bn_eps=v["model.bn_eps"],
            bn_momentum=v["model.bn_momentum"],
        )

    def train_config(self):
        from .training import TrainConfig

        v = self.values
        return TrainConfig(
            batch_size=v["train.batch_size"],
            epochs=v["train.epochs"],
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            adam_eps=v["train.adam_eps"],
            smoothing=v["train.smoothing"],
            seed=v["train.seed"],
            coarse_weight=v["train.coarse_weight"],
            squared_residual=v["train.squared_residual"],
            sign_augment=v["train.sign_augment"],
            checkpoint_every=v["train.checkpoint_every"],
            rel_threshold=v["mask.rel_threshold"],
        )

    def split_ratios(self) -> tuple[float, float, float]:
        return (self.values["split.train"], self.values["split.val"], self.values["split.test"])


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def load_config(path: str | None, seed_override: int | None = None) -> RunConfig:
    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise ContractError(f"config file not found: {path}")
        values = parse_config_text(file_path.read_text())
    else:
        values = {key: default for key, (default, _) in DEFAULTS.items()}
    if seed_override is not None:
        values["train.seed"] = int(seed_override)
    _validate(values)
    return RunConfig(values=values)


def _validate(values: dict[str, object]) -> None:
    if values["phantom.count"] < 3:
        raise ContractError(f"phantom.count must be at least 3, got {values['phantom.count']}")
    if values["phantom.dim"] < 4 * 2:
        raise ContractError(f"phantom.dim must be at least 8, got {values['phantom.dim']}")
    ratios = (values["split.train"], values["split.val"], values["split.test"])
    if abs(sum(ratios) - 1.0) > 0.01:
        raise ContractError(f"split fractions must sum to 1, got {sum(ratios)}")
    if values["eval.stride"] < 1:
        raise ContractError(f"eval.stride must be positive, got {values['eval.stride']}")
    if values["eval.batch"] < 1:
        raise ContractError(f"eval.batch must be positive, got {values['eval.batch']}")
    if not 0.0 <= values["mask.rel_threshold"] <= 1.0:
        raise ContractError(f"mask.rel_threshold must lie in [0, 1], got {values['mask.rel_threshold']}")
    if values["train.seed"] < 0:
        raise ContractError(f"train.seed must be nonnegative, got {values['train.seed']}")


def config_help() -> str:
    lines = ["configuration keys (key = default  -- description):"]
    for key, (default, description) in DEFAULTS.items():
        lines.append(f"  {key} = {_format_value(default)}  -- {description}")
    return "\n".join(lines)

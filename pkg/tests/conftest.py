import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # oracles.py

DESK_CONFIG_TEXT = """\
model.n = 4
model.width = 16
train.batch_size = 8
train.epochs = 150
train.lr = 1e-3
train.checkpoint_every = 50
"""


@dataclass
class DeskRun:
    data_dir: Path
    out_dir: Path
    eval_dir: Path
    config: object
    history: list
    checkpoint: Path
    evaluation: object  # report.CohortEvaluation
    labels: dict
    train_seconds: float
    total_seconds: float


def _build_desk_run(root: Path) -> DeskRun:
    from fiberpaint.config import parse_config_text, RunConfig
    from fiberpaint.report import evaluate_test_split, load_model
    from fiberpaint.training import Trainer
    from fiberpaint.cli import cmd_phantom_gen, _load_cohort

    started = time.perf_counter()
    cfg = RunConfig(values=parse_config_text(DESK_CONFIG_TEXT))
    data_dir = root / "data"
    out_dir = root / "run"
    eval_dir = root / "eval"
    config_path = root / "desk.cfg"
    config_path.write_text(DESK_CONFIG_TEXT)

    class _Args:
        config = str(config_path)
        seed = None
        out = str(data_dir)

    cmd_phantom_gen(_Args())
    volumes, labels, split = _load_cohort(str(data_dir), with_labels=True)
    assert len(volumes) == cfg["phantom.count"] == 60
    assert (len(split.train), len(split.val), len(split.test)) == (42, 9, 9)

    train_start = time.perf_counter()
    trainer = Trainer(
        cfg.model_config(), cfg.train_config(), volumes, split, out_dir=out_dir, config_text=cfg.echo()
    )
    history = trainer.run()
    train_seconds = time.perf_counter() - train_start
    checkpoint = out_dir / f"ckpt_{trainer.epoch:05d}.mdck"

    model, norm_scale = load_model(cfg.model_config(), checkpoint)
    evaluation = evaluate_test_split(
        model,
        norm_scale,
        volumes,
        labels,
        split,
        rel_threshold=cfg["mask.rel_threshold"],
        stride=cfg["eval.stride"],
        batch=cfg["eval.batch"],
    )
    return DeskRun(
        data_dir=data_dir,
        out_dir=out_dir,
        eval_dir=eval_dir,
        config=cfg,
        history=history,
        checkpoint=checkpoint,
        evaluation=evaluation,
        labels=labels,
        train_seconds=train_seconds,
        total_seconds=time.perf_counter() - started,
    )


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory) -> DeskRun:
    """The scaled phantom experiment: 60 phantoms, 32^3 voxels, n=4.

    Trained live once per session (several minutes).  Set
    FIBERPAINT_DESK_DIR to reuse a directory across sessions during
    development.
    """
    cache = os.environ.get("FIBERPAINT_DESK_DIR")
    if cache:
        root = Path(cache)
        root.mkdir(parents=True, exist_ok=True)
        marker = root / "done.marker"
        if marker.exists():
            run = _load_cached_desk_run(root)
            if run is not None:
                return run
        run = _build_desk_run(root)
        marker.write_text(f"{run.train_seconds}\n{run.total_seconds}\n")
        return run
    return _build_desk_run(tmp_path_factory.mktemp("desk"))


def _load_cached_desk_run(root: Path) -> DeskRun | None:
    from fiberpaint.config import parse_config_text, RunConfig
    from fiberpaint.report import evaluate_test_split, load_model
    from fiberpaint.cli import _load_cohort
    from fiberpaint.training import METRIC_COLUMNS

    cfg = RunConfig(values=parse_config_text(DESK_CONFIG_TEXT))
    out_dir = root / "run"
    checkpoint = out_dir / f"ckpt_{cfg['train.epochs']:05d}.mdck"
    metrics = out_dir / "metrics.tsv"
    if not checkpoint.exists() or not metrics.exists():
        return None
    history = []
    lines = metrics.read_text().splitlines()
    for line in lines[1:]:
        values = line.split("\t")
        history.append({col: float(v) for col, v in zip(METRIC_COLUMNS, values)})
    volumes, labels, split = _load_cohort(str(root / "data"), with_labels=True)
    model, norm_scale = load_model(cfg.model_config(), checkpoint)
    evaluation = evaluate_test_split(
        model, norm_scale, volumes, labels, split,
        rel_threshold=cfg["mask.rel_threshold"], stride=cfg["eval.stride"], batch=cfg["eval.batch"],
    )
    train_seconds, total_seconds = (float(x) for x in (root / "done.marker").read_text().split())
    return DeskRun(
        data_dir=root / "data",
        out_dir=out_dir,
        eval_dir=root / "eval",
        config=cfg,
        history=history,
        checkpoint=checkpoint,
        evaluation=evaluation,
        labels=labels,
        train_seconds=train_seconds,
        total_seconds=total_seconds,
    )

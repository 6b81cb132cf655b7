"""Command-line interface.

Subcommands: phantom-gen, train, eval, render, gradcheck.  Global flags
(valid on every subcommand): --config, --seed, --threads.  Exit codes:
0 success, 1 contract error, 2 numerical abort.

Heavy imports happen inside the command handlers so that --threads can pin
the BLAS thread count before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=os.environ.get("FIBERPAINT_CONFIG"),
        help="config file path (default: $FIBERPAINT_CONFIG or built-in defaults)",
    )
    common.add_argument("--seed", type=int, default=None, help="override train.seed")
    common.add_argument(
        "--threads",
        type=int,
        default=None,
        help="BLAS thread count; 1 gives bitwise-deterministic runs (default 1)",
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    from .config import config_help

    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="fiberpaint",
        description=(
            "Uncertainty-aware inpainting of 3D fiber-orientation fields "
            "and localized wiring-complexity maps."
        ),
        epilog=config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("phantom-gen", parents=[common], help="generate a phantom cohort")
    p_gen.add_argument("--out", required=True, help="output directory")

    p_train = sub.add_parser("train", parents=[common], help="train the inpainting model")
    p_train.add_argument("--data", required=True, help="cohort directory (from phantom-gen)")
    p_train.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_eval.add_argument("--data", required=True, help="cohort directory")
    p_eval.add_argument("--out", required=True, help="output directory for maps and reports")

    p_render = sub.add_parser("render", parents=[common], help="render one map slice as a P5 graymap")
    p_render.add_argument("--map", required=True, help="single-channel map volume file")
    p_render.add_argument("--axis", required=True, choices=("x", "y", "z"))
    p_render.add_argument("--index", required=True, type=int, help="slice index along the axis")
    p_render.add_argument("--out", required=True, help="output .pgm path")

    sub.add_parser("gradcheck", parents=[common], help="run the finite-difference gradient suite")
    return parser


def _set_threads(n: int | None) -> None:
    # Must run before numpy is imported for the BLAS pools to honor it.
    variables = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
    if n is None:
        for var in variables:
            os.environ.setdefault(var, "1")
        return
    if n < 1:
        raise SystemExit("--threads must be at least 1")
    for var in variables:
        os.environ[var] = str(n)


def cmd_phantom_gen(args) -> int:
    import numpy as np

    from .config import load_config
    from .phantoms import desk_phantom_config, generate_phantom, make_split, scan_seed
    from .volio import ManifestRow, write_labels, write_manifest, write_volume

    cfg = load_config(args.config, args.seed)
    seed = cfg["train.seed"]
    count = cfg["phantom.count"]
    dims = (cfg["phantom.dim"],) * 3
    split = make_split(count, cfg.split_ratios(), seed)
    split_of = {}
    for name in ("train", "val", "test"):
        for sid in getattr(split, name):
            split_of[sid] = name

    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for scan_id in range(count):
        sseed = scan_seed(seed, scan_id)
        phantom_cfg = desk_phantom_config(
            dims,
            sseed,
            magnitude=cfg["phantom.magnitude"],
            angular_jitter_deg=cfg["phantom.angular_jitter_deg"],
            magnitude_jitter=cfg["phantom.magnitude_jitter"],
            crossing_weight=cfg["phantom.crossing_weight"],
            dispersion_half_angle_deg=cfg["phantom.dispersion_half_angle_deg"],
            background_rel=cfg["phantom.background_rel"],
        )
        volume, labels = generate_phantom(phantom_cfg)
        vol_name = f"scan_{scan_id:03d}.mdav"
        lab_name = f"scan_{scan_id:03d}_labels.mdav"
        write_volume(os.path.join(out_dir, vol_name), volume.vectors)
        write_labels(os.path.join(out_dir, lab_name), labels)
        rows.append(
            ManifestRow(
                scan_id=scan_id,
                split=split_of[scan_id],
                seed=sseed,
                volume_file=vol_name,
                labels_file=lab_name,
            )
        )
    write_manifest(os.path.join(out_dir, "manifest.tsv"), rows)
    with open(os.path.join(out_dir, "config.cfg"), "w") as handle:
        handle.write(cfg.echo())
    print(f"wrote {count} scans and manifest to {out_dir}")
    return 0


def _load_cohort(data_dir: str, with_labels: bool = False):
    import numpy as np

    from .errors import ContractError
    from .fields import VectorVolume
    from .phantoms import DatasetSplit
    from .volio import read_labels, read_manifest, read_volume

    manifest_path = os.path.join(data_dir, "manifest.tsv")
    if not os.path.exists(manifest_path):
        raise ContractError(f"no manifest.tsv in {data_dir}")
    rows = read_manifest(manifest_path)
    volumes, labels = {}, {}
    buckets = {"train": [], "val": [], "test": []}
    for row in rows:
        data = read_volume(os.path.join(data_dir, row.volume_file))
        if data.shape[3] != 3:
            raise ContractError(f"{row.volume_file}: expected 3 channels, got {data.shape[3]}")
        volumes[row.scan_id] = VectorVolume(vectors=data)
        if with_labels:
            labels[row.scan_id] = read_labels(os.path.join(data_dir, row.labels_file))
        buckets[row.split].append(row.scan_id)
    split = DatasetSplit(
        train=tuple(sorted(buckets["train"])),
        val=tuple(sorted(buckets["val"])),
        test=tuple(sorted(buckets["test"])),
    )
    return volumes, labels, split


def cmd_train(args) -> int:
    from .config import load_config
    from .training import Trainer

    cfg = load_config(args.config, args.seed)
    volumes, _, split = _load_cohort(args.data)
    trainer = Trainer(
        cfg.model_config(), cfg.train_config(), volumes, split, out_dir=args.out, config_text=cfg.echo()
    )
    if args.resume:
        trainer.load_checkpoint(args.resume)
    trainer.run()
    if trainer.history:
        from .figures import save_training_curve

        save_training_curve(os.path.join(args.out, "training_curve.png"), trainer.history)
    print(f"trained to epoch {trainer.epoch}; metrics in {os.path.join(args.out, 'metrics.tsv')}")
    return 0


def cmd_eval(args) -> int:
    from .config import load_config
    from .report import evaluate_cohort

    cfg = load_config(args.config, args.seed)
    volumes, labels, split = _load_cohort(args.data, with_labels=True)
    summary = evaluate_cohort(cfg, args.checkpoint, volumes, labels, split, args.out)
    print(summary)
    return 0


def cmd_render(args) -> int:
    from .errors import ContractError
    from .figures import take_slice, write_pgm
    from .volio import read_volume

    data = read_volume(args.map)
    if data.shape[3] != 1:
        raise ContractError(f"{args.map}: render expects a single-channel map, got {data.shape[3]} channels")
    write_pgm(args.out, take_slice(data[..., 0], args.axis, args.index))
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results, elapsed = run_suite()
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {elapsed:.1f} s")
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)

    from .errors import ContractError, NumericalError

    handlers = {
        "phantom-gen": cmd_phantom_gen,
        "train": cmd_train,
        "eval": cmd_eval,
        "render": cmd_render,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

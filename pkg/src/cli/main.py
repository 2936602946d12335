"""
main.py
-------
Operator entry point.

    python -m src.cli generate --out ds --frames 300 --loops 3 --seed 7
    python -m src.cli train --dataset ds --task seg --steps 400 --out runs
    python -m src.cli train --dataset ds --task joint --steps 2000 --out runs \
        --init runs/model-loc.npz --init runs/model-vo.npz --init runs/model-seg.npz
    python -m src.cli eval --dataset ds --split test --model runs/model-joint.npz --report runs/report.yaml
    python -m src.cli gradcheck
    python -m src.cli plot --trajectory runs/report-trajectory.csv --out runs/trajectory.svg

Exit codes: 0 success, 1 usage or configuration, 2 data error, 3 check failure.
Log verbosity follows ``VLOC_LOG_LEVEL`` unless ``--verbose`` is given.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from src.cli.gradcheck_suite import run_suite
from src.dataio.config import build_config, read_config
from src.dataio.dataset import SPLITS, load_dataset
from src.eval.reports import build_report, export_trajectory, plot_trajectory, read_trajectory, write_report
from src.geometry.camera import CameraIntrinsics
from src.networks.checkpoint import load_checkpoint
from src.synthworld.exporter import export_dataset
from src.synthworld.scene import generate_scene
from src.synthworld.trajectory import generate_trajectory
from src.trainer.trainer import SINGLE_TASKS, TASKS, Trainer, build_model, load_model
from src.utils.errors import VLocError
from src.utils.log import configure, get_logger

logger = get_logger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging (overrides VLOC_LOG_LEVEL).")
def cli(verbose: bool) -> None:
    """Multitask visual localization: synthetic data, training, evaluation."""
    configure("DEBUG" if verbose else None)


# ---------------------------------
# generate
# ---------------------------------
@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Dataset directory.")
@click.option("--frames", default=300, show_default=True, type=int, help="Total frames over all loops.")
@click.option("--loops", default=3, show_default=True, type=int, help="Number of closed loops (sequences).")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--size", default=64, show_default=True, type=int, help="Square image side in pixels.")
@click.option("--workers", default=2, show_default=True, type=int, help="Rendering threads.")
@click.option("--progress", is_flag=True, help="Show a progress bar.")
def generate(out_dir: str, frames: int, loops: int, seed: int, size: int, workers: int, progress: bool) -> None:
    """Render a synthetic dataset with ground-truth pose, depth and labels."""
    if frames <= 0:
        raise click.BadParameter("must be positive", param_hint="--frames")
    if loops <= 0:
        raise click.BadParameter("must be positive", param_hint="--loops")
    if frames % loops:
        raise click.BadParameter(f"{frames} frames do not split evenly over {loops} loops", param_hint="--frames")
    if size <= 0 or size % 32:
        raise click.BadParameter("must be a positive multiple of 32", param_hint="--size")
    if workers <= 0:
        raise click.BadParameter("must be positive", param_hint="--workers")

    scene = generate_scene(seed)
    traj = generate_trajectory(scene, loops, frames // loops, seed)
    index = export_dataset(scene, traj, CameraIntrinsics.default_for(size), out_dir, workers, show_progress=progress)

    click.echo(f"dataset   : {index.root}")
    click.echo(f"frames    : {len(index)} ({size}x{size})")
    click.echo(f"sequences : {', '.join(index.sequence_names())}")
    click.echo(f"train     : {', '.join(index.sequence_names('train'))}")
    click.echo(f"test      : {', '.join(index.sequence_names('test'))}")


# ---------------------------------
# train
# ---------------------------------
@cli.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--task", required=True, type=click.Choice(TASKS))
@click.option("--steps", required=True, type=click.IntRange(min=0))
@click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False),
              help="key = value run configuration (defaults when omitted).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--init", "inits", multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Initial checkpoint; joint training takes the loc, vo and seg checkpoints.")
@click.option("--from-scratch", is_flag=True, help="Joint training without single-task checkpoints.")
@click.option("--progress", is_flag=True, help="Show a progress bar.")
def train(dataset_dir, task, steps, config_path, out_dir, inits, from_scratch, progress) -> None:
    """Run one training stage and write model-<task>.npz plus loss-trace-<task>.csv."""
    cfg = read_config(config_path)
    dataset = load_dataset(dataset_dir)
    trainer = Trainer(dataset, cfg, out_dir, show_progress=progress)

    if task in SINGLE_TASKS:
        if len(inits) > 1:
            raise click.BadParameter(f"{task} training takes at most one checkpoint", param_hint="--init")
        if from_scratch:
            raise click.BadParameter("only applies to joint training", param_hint="--from-scratch")
        result = trainer.train_single_task(task, steps, init=inits[0] if inits else None)
    else:
        if from_scratch and inits:
            raise click.BadParameter("cannot be combined with --init", param_hint="--from-scratch")
        if not from_scratch and not inits:
            raise click.UsageError("joint training needs --init for the loc, vo and seg checkpoints, or --from-scratch")
        by_task = {}
        for path in inits:
            _, meta = load_checkpoint(path)
            source = meta.get("task")
            if source in by_task:
                raise click.BadParameter(f"two {source} checkpoints given", param_hint="--init")
            by_task[source] = path
        result = trainer.train_joint(steps, by_task or None)

    click.echo(f"checkpoint : {result.checkpoint}")
    click.echo(f"loss trace : {result.trace_path}")
    if len(result.trace):
        click.echo(f"loss       : {result.trace['loss'].iloc[0]:.6g} -> {result.trace['loss'].iloc[-1]:.6g}")


# ---------------------------------
# eval
# ---------------------------------
@cli.command(name="eval")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", default="test", show_default=True, type=click.Choice(SPLITS))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_path", required=True, type=click.Path(dir_okay=False))
@click.option("--oracle", is_flag=True, hidden=True)
def evaluate(dataset_dir, split, model_path, report_path, oracle) -> None:
    """Score a checkpoint; writes the report plus a trajectory CSV and SVG next to it."""
    dataset = load_dataset(dataset_dir)
    if model_path is None and not oracle:
        raise click.UsageError("--model is required")

    if model_path is not None:
        model, meta = load_model(model_path)
        task = meta.get("task", "joint")
        cfg = build_config(meta.get("config", {}))
    else:
        cfg = read_config(None).updated(input_size=dataset.size[0], num_classes=dataset.num_classes)
        model, task = build_model(cfg), "joint"

    evaluation = Trainer(dataset, cfg, Path(report_path).parent).evaluate(model, task, split, oracle=oracle)
    report = build_report(
        evaluation.localization,
        evaluation.odometry,
        evaluation.segmentation,
        dataset.palette,
        task=task,
        split=split,
        checkpoint=str(model_path) if model_path else None,
        dataset=str(dataset.root),
        frames=evaluation.frames,
        sequences=evaluation.sequences,
        seed=cfg.seed,
    )
    report_file = write_report(report_path, report)
    click.echo(f"report     : {report_file}")

    if evaluation.localization is not None:
        stem = Path(report_path).with_suffix("")
        csv_path = stem.parent / f"{stem.name}-trajectory.csv"
        svg_path = stem.parent / f"{stem.name}-trajectory.svg"
        export_trajectory(evaluation.pred_poses, evaluation.gt_poses, csv_path, svg_path)
        click.echo(f"trajectory : {csv_path}")
    for key in ("median_translation", "median_rotation", "accuracy_5cm5deg",
                "vo_translational_drift", "vo_rotational_drift", "mean_iou"):
        if report[key] is not None:
            click.echo(f"{key:<22} {report[key]:.6g}")


# ---------------------------------
# gradcheck
# ---------------------------------
@cli.command()
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--skip-model", is_flag=True, help="Leave out the downsized joint model.")
@click.option("--inject-fault", is_flag=True, hidden=True)
def gradcheck(seed: int, skip_model: bool, inject_fault: bool) -> None:
    """Compare every backward rule with central finite differences."""
    report = run_suite(seed=seed, inject_fault=inject_fault, include_model=not skip_model)
    for group, err in report.group_max().items():
        click.echo(f"{group:<11} max rel err {err:.3e}")
    click.echo(f"{len(report.results)} cases in {report.seconds:.1f}s")
    if not report.passed:
        for r in report.failures():
            click.echo(f"FAILED {r.group}/{r.name}: {r.max_rel_err:.3e}", err=True)
        raise SystemExit(EXIT_CHECK)


# ---------------------------------
# plot
# ---------------------------------
@cli.command()
@click.option("--trajectory", "csv_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "svg_path", required=True, type=click.Path(dir_okay=False))
def plot(csv_path: str, svg_path: str) -> None:
    """Top-down SVG of a trajectory CSV written by eval."""
    path = plot_trajectory(read_trajectory(csv_path), svg_path, title=Path(csv_path).stem)
    click.echo(f"plot       : {path}")


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, prog_name="vloc", standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("Aborted.", err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except VLocError as exc:
        logger.error(str(exc))
        return exc.exit_code
    except OSError as exc:
        logger.error(str(exc))
        return EXIT_DATA
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""
trainer.py
----------
Multi-stage optimization: single-task pretraining (loc | vo | seg) followed
by joint fine-tuning of the multitask objective, plus evaluation of a
checkpoint on a dataset split.

Outputs per run, under ``out_dir``:

    model-<task>.npz          checkpoint (see ``networks.checkpoint``)
    loss-trace-<task>.csv     step, loss, per-task terms, every ŝ value
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.autodiff.tensor import Tape, Tensor, backward, no_grad
from src.dataio.config import RunConfig, build_config
from src.dataio.dataset import DatasetIndex
from src.eval.metrics import (
    LocalizationReport,
    OdometryReport,
    SegmentationReport,
    iou_from_confusion,
    localization_report,
    vo_drift,
    confusion_counts,
)
from src.geometry.pose import RelativePose
from src.losses.pose_losses import euclidean_pose_loss, localization_loss, odometry_loss
from src.losses.pose_terms import TRAINING_NORM_EPS, PoseBatch, to_relative_batch
from src.losses.segmentation import segmentation_loss
from src.losses.uncertainty import WEIGHT_NAMES, UncertaintyWeights, multitask_loss
from src.networks.checkpoint import load_checkpoint, load_into, save_checkpoint, shape_diff
from src.networks.model import (
    JointModel,
    ModelConfig,
    TemporalFeatureCache,
    forward_global_pose,
    forward_joint,
    forward_odometry,
    forward_segmentation,
)
from src.trainer.adam import AdamState, adam_step, check_finite, clip_by_global_norm
from src.trainer.batching import FrameBatcher, SegmentBatcher, gt_relatives
from src.utils.errors import CheckpointError, ConfigError, DataFormatError
from src.utils.log import ProgressReporter, get_logger

logger = get_logger(__name__)

SINGLE_TASKS = ("loc", "vo", "seg")
TASKS = SINGLE_TASKS + ("joint",)

# parameters each single-task checkpoint contributes to the joint model
OWNERSHIP = {
    "loc": (
        ("trunk.", "pose.", "fusion.temporal."),
        ("uncertainty.s_x", "uncertainty.s_q", "uncertainty.s_x_rel", "uncertainty.s_q_rel"),
    ),
    "vo": (("odom.",), ("uncertainty.s_x_vo", "uncertainty.s_q_vo")),
    "seg": (("seg.",), ()),
}
TASK_TERMS = {"loc": ("l_loc",), "vo": ("l_vo",), "seg": ("l_seg",), "joint": ("l_loc", "l_vo", "l_seg")}


def owned_names(task: str, names: Iterable[str]) -> list[str]:
    prefixes, exact = OWNERSHIP[task]
    return [n for n in names if n.startswith(prefixes) or n in exact]


def build_model(cfg: RunConfig) -> JointModel:
    model = JointModel(ModelConfig.from_run_config(cfg))
    model.uncertainty = UncertaintyWeights.initial(rotation=cfg.s_rotation_init)
    return model


def load_model(path: str | Path) -> tuple[JointModel, dict]:
    """Rebuilds the model described by a checkpoint's metadata and loads it strictly."""
    arrays, meta = load_checkpoint(path)
    try:
        cfg = build_config(meta.get("config", {}))
    except ConfigError as exc:
        raise CheckpointError(f"{path}: checkpoint metadata holds an invalid config ({exc})") from exc
    model = build_model(cfg)
    load_into(model.parameters(), arrays, strict=True, source=str(path))
    return model, meta


def unreached_parameters(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> list[str]:
    """Parameters with no gradient or an all-zero one."""
    return sorted(n for n in params if n not in grads or not np.any(grads[n]))


def joint_terms(model: JointModel, batch, K, cache: TemporalFeatureCache) -> tuple:
    """Raw (l_loc, l_vo, l_seg) of one joint step and the cache it leaves behind."""
    out = forward_joint(model, Tensor(batch.img_prev), Tensor(batch.img_curr), batch.depth_curr, K, cache)
    u = model.uncertainty
    curr = out.pose.normalized(TRAINING_NORM_EPS)
    gt_curr = PoseBatch.from_poses(batch.pose_curr)
    gt_rel = to_relative_batch(batch.gt_rel)
    if cache.prev_pose is None:
        l_loc = euclidean_pose_loss(curr, gt_curr, u, eps=TRAINING_NORM_EPS)
    else:
        l_loc = localization_loss(cache.prev_pose, curr, gt_curr, gt_rel, u, eps=TRAINING_NORM_EPS)
    l_vo = odometry_loss(out.odometry.normalized(TRAINING_NORM_EPS), gt_rel, u, eps=TRAINING_NORM_EPS)
    l_seg = segmentation_loss(out.logits, batch.labels_curr)
    return l_loc, l_vo, l_seg, out.cache


def joint_unreached(model: JointModel, batch, K) -> list[str]:
    """
    Parameters the multitask gradient misses on ``batch`` once the temporal
    cache holds that batch's own features. Frozen tensors are skipped, and
    so are the fusion sites when fusion is off. Runs in eval mode.
    """
    training = model.training
    model.eval()
    with no_grad():
        *_, cache = joint_terms(model, batch, K, TemporalFeatureCache.empty())
    params = {
        name: t for name, t in model.parameters().items()
        if t.requires_grad and (model.fusion_enabled or not name.startswith("fusion."))
    }
    with Tape():
        l_loc, l_vo, l_seg, _ = joint_terms(model, batch, K, cache)
        grads = backward(multitask_loss(l_loc, l_vo, l_seg, model.uncertainty), wrt=list(params.values()))
    model.training = training
    return unreached_parameters(params, {name: grads[t].values for name, t in params.items()})


@dataclass
class TrainResult:
    task: str
    checkpoint: Path
    trace_path: Path
    trace: pd.DataFrame
    model: JointModel = field(repr=False)


@dataclass
class Evaluation:
    task: str
    localization: LocalizationReport | None
    odometry: OdometryReport | None
    segmentation: SegmentationReport | None
    pred_poses: list
    gt_poses: list
    frames: int
    sequences: list


StepFn = Callable[[JointModel, object, TemporalFeatureCache], tuple]


class Trainer:
    """
    Parameters
    ----------
    dataset       : loaded ``DatasetIndex``; training reads its train split.
    config        : run configuration (optimizer, batching, topology).
    out_dir       : where checkpoints and loss traces are written.
    show_progress : draw tqdm bars in addition to the periodic log lines.
    """

    def __init__(self, dataset: DatasetIndex, config: RunConfig, out_dir: str | Path, show_progress: bool = False):
        self.dataset = dataset
        self.cfg = config
        self.out_dir = Path(out_dir)
        self.show_progress = show_progress
        self.K = dataset.intrinsics
        if dataset.size != (config.input_size, config.input_size):
            raise ConfigError(
                "input_size", f"{config.input_size} does not match dataset frames {dataset.size[1]}x{dataset.size[0]}"
            )
        if dataset.num_classes != config.num_classes:
            raise ConfigError(
                "num_classes", f"{config.num_classes} does not match the dataset palette of {dataset.num_classes}"
            )

    # ---------------------------------
    # Per-task step losses
    # ---------------------------------
    def _seg_step(self, model, batch, cache):
        out = forward_segmentation(model, Tensor(batch.img), TemporalFeatureCache.empty())
        loss = segmentation_loss(out.logits, batch.labels)
        return loss, {"l_seg": loss.item()}, cache

    def _loc_step(self, model, batch, cache):
        pred, s5 = forward_global_pose(model, Tensor(batch.img_curr), cache)
        curr = pred.normalized(TRAINING_NORM_EPS)
        gt_curr = PoseBatch.from_poses(batch.pose_curr)
        u = model.uncertainty
        if cache.prev_pose is None:
            loss = euclidean_pose_loss(curr, gt_curr, u, eps=TRAINING_NORM_EPS)
        else:
            loss = localization_loss(
                cache.prev_pose, curr, gt_curr, to_relative_batch(batch.gt_rel), u, eps=TRAINING_NORM_EPS
            )
        new_cache = TemporalFeatureCache(pose_features=s5.detach(), prev_pose=curr.detach())
        return loss, {"l_loc": loss.item()}, new_cache

    def _vo_step(self, model, batch, cache):
        pred = forward_odometry(model, Tensor(batch.img_prev), Tensor(batch.img_curr))
        loss = odometry_loss(
            pred.normalized(TRAINING_NORM_EPS), to_relative_batch(batch.gt_rel), model.uncertainty,
            eps=TRAINING_NORM_EPS,
        )
        return loss, {"l_vo": loss.item()}, cache

    def _joint_terms(self, model, batch, cache):
        return joint_terms(model, batch, self.K, cache)

    def _joint_step(self, model, batch, cache):
        l_loc, l_vo, l_seg, new_cache = self._joint_terms(model, batch, cache)
        loss = multitask_loss(l_loc, l_vo, l_seg, model.uncertainty)
        terms = {"l_loc": l_loc.item(), "l_vo": l_vo.item(), "l_seg": l_seg.item()}
        return loss, terms, new_cache

    # ---------------------------------
    # Optimization loop
    # ---------------------------------
    def _batches(self, task: str) -> Iterable:
        sequences = self.dataset.load_split("train", self.cfg.prefetch_workers)
        if task == "seg":
            return FrameBatcher(
                sequences, self.cfg.batch, self.cfg.seed,
                augment=self.cfg.augment_segmentation, crop_min_scale=self.cfg.crop_min_scale,
            )
        return SegmentBatcher(sequences, self.cfg.batch, self.cfg.segment_length, self.cfg.seed)

    def _optimize(self, model: JointModel, task: str, steps: int, lr: float, step_fn: StepFn, batches) -> pd.DataFrame:
        params = model.parameters()
        name_of = {id(t): name for name, t in params.items()}
        state = AdamState.from_config(self.cfg, lr)
        columns = ["step", "loss", *TASK_TERMS[task], *WEIGHT_NAMES, "grad_norm"]
        rows = []

        model.train()
        cache = TemporalFeatureCache.empty()
        progress = ProgressReporter(logger, steps, every=self.cfg.log_every, label="step")
        bar = tqdm(total=steps, desc=f"Training {task}", unit="step", disable=not self.show_progress)
        stream = iter(batches)

        for step in range(1, steps + 1):
            batch = next(stream)
            if getattr(batch, "reset", False):
                cache = TemporalFeatureCache.empty()

            with Tape():
                loss, terms, cache = step_fn(model, batch, cache)
                grads = backward(loss)

            named = {name_of[id(leaf)]: g.values for leaf, g in grads.items() if id(leaf) in name_of}
            check_finite(named)
            named, norm = clip_by_global_norm(named, self.cfg.grad_clip_norm)
            adam_step(params, named, state)

            rows.append({"step": step, "loss": loss.item(), **terms, **model.uncertainty.as_dict(), "grad_norm": norm})
            bar.update(1)
            progress.update(step, loss=rows[-1]["loss"])

        bar.close()
        return pd.DataFrame(rows, columns=columns)

    def _save(self, model: JointModel, task: str, steps: int, trace: pd.DataFrame, extra: dict | None = None) -> TrainResult:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        meta = {
            "task": task,
            "steps": steps,
            "config": self.cfg.model_dump(),
            "dataset": str(self.dataset.root),
            **(extra or {}),
        }
        ckpt = save_checkpoint(self.out_dir / f"model-{task}.npz", model.state_dict(), meta)
        trace_path = self.out_dir / f"loss-trace-{task}.csv"
        trace.to_csv(trace_path, index=False, float_format="%.17g")

        summary = "n/a"
        if len(trace):
            summary = f"{trace['loss'].iloc[0]:.4f} -> {trace['loss'].iloc[-1]:.4f}"
        logger.info(f"{task} training finished: {steps} steps, loss {summary}, checkpoint {ckpt}")
        return TrainResult(task, ckpt, trace_path, trace, model)

    # ---------------------------------
    # Public stages
    # ---------------------------------
    def _require_labels(self, task: str) -> None:
        if task in ("seg", "joint") and not self.dataset.has_labels:
            raise DataFormatError(f"{self.dataset.root}: dataset has no semantic labels; task {task!r} needs them")

    def train_single_task(self, task: str, steps: int, init: str | Path | None = None) -> TrainResult:
        if task not in SINGLE_TASKS:
            raise ConfigError("task", f"expected one of {SINGLE_TASKS}, got {task!r}")
        self._require_labels(task)

        model = build_model(self.cfg)
        extra = {}
        if init is not None:
            arrays, meta = load_checkpoint(init)
            conflicts = [
                line for line in shape_diff({n: t.values for n, t in model.parameters().items()}, arrays)
                if "expected" in line
            ]
            if conflicts:
                raise CheckpointError(f"{init} is incompatible with the model:\n  " + "\n  ".join(conflicts))
            loaded = load_into(model.parameters(), arrays, strict=False, source=str(init))
            extra["init"] = {meta.get("task", "?"): str(init)}
            logger.info(f"Initialized {len(loaded)} tensors from {init}")

        step_fn = {"loc": self._loc_step, "vo": self._vo_step, "seg": self._seg_step}[task]
        logger.info(f"Training {task}: {steps} steps, lr={self.cfg.lr_single}, batch={self.cfg.batch}")
        trace = self._optimize(model, task, steps, self.cfg.lr_single, step_fn, self._batches(task) if steps else ())
        return self._save(model, task, steps, trace, extra)

    def _merge_checkpoints(self, model: JointModel, init_checkpoints: Mapping[str, str | Path]) -> None:
        params = model.parameters()
        for task, path in init_checkpoints.items():
            if task not in SINGLE_TASKS:
                raise CheckpointError(f"{path}: cannot initialize a joint model from a {task!r} checkpoint")
            arrays, _ = load_checkpoint(path)
            names = owned_names(task, params)
            missing = [n for n in names if n not in arrays]
            wrong = [
                f"{n}: expected {params[n].shape}, found {arrays[n].shape}"
                for n in names if n in arrays and arrays[n].shape != params[n].shape
            ]
            if missing or wrong:
                lines = [f"missing {n} {params[n].shape}" for n in missing] + wrong
                raise CheckpointError(f"{path} is incompatible with the joint model:\n  " + "\n  ".join(lines))
            for n in names:
                params[n].values = np.array(arrays[n], dtype=np.float64)
            logger.info(f"Joint model: {len(names)} {task} tensors from {path}")

    def _calibrate_task_weights(self, model: JointModel, batch) -> None:
        """Start each task weight at its stationary point ŝ = ln L for the first batch."""
        with no_grad():
            l_loc, l_vo, l_seg, _ = self._joint_terms(model, batch, TemporalFeatureCache.empty())
        u = model.uncertainty
        for s, loss in ((u.s_loc, l_loc), (u.s_vo, l_vo), (u.s_seg, l_seg)):
            s.values = np.array(math.log(max(loss.item(), 1e-6)))
        logger.info(f"Calibrated task weights: s_loc={u.s_loc.item():.3f} s_vo={u.s_vo.item():.3f} s_seg={u.s_seg.item():.3f}")

    def train_joint(self, steps: int, init_checkpoints: Mapping[str, str | Path] | None = None) -> TrainResult:
        self._require_labels("joint")
        model = build_model(self.cfg)
        if init_checkpoints:
            missing = [t for t in SINGLE_TASKS if t not in init_checkpoints]
            if missing:
                raise CheckpointError(f"joint training needs loc, vo and seg checkpoints; missing {missing}")
            self._merge_checkpoints(model, init_checkpoints)

        extra: dict = {"init": {t: str(p) for t, p in (init_checkpoints or {}).items()}}
        batches: Iterable = ()
        if steps:
            stream = iter(self._batches("joint"))
            first = next(stream)
            unreached = joint_unreached(model, first, self.K)
            if unreached:
                logger.warning(
                    f"Joint training starts with {len(unreached)} parameters the gradient does not reach: "
                    + ", ".join(unreached)
                )
            extra["unreached"] = unreached
            if self.cfg.calibrate_task_weights:
                model.train()
                self._calibrate_task_weights(model, first)
            batches = itertools.chain([first], stream)

        logger.info(f"Training joint: {steps} steps, lr={self.cfg.lr_joint}, batch={self.cfg.batch}")
        trace = self._optimize(model, "joint", steps, self.cfg.lr_joint, self._joint_step, batches)
        return self._save(model, "joint", steps, trace, extra)

    # ---------------------------------
    # Evaluation
    # ---------------------------------
    def evaluate(self, model: JointModel, task: str = "joint", split: str = "test", oracle: bool = False) -> Evaluation:
        """
        Full-frame evaluation, batch 1, temporal cache threaded through each
        sequence. ``oracle`` substitutes ground truth for every prediction.
        """
        if task not in TASKS:
            raise ConfigError("task", f"expected one of {TASKS}, got {task!r}")
        if task == "seg":
            self._require_labels(task)
        model.eval()
        sequences = self.dataset.load_split(split, self.cfg.prefetch_workers)
        with_loc = task in ("loc", "joint")
        with_vo = task in ("vo", "joint")
        with_seg = task in ("seg", "joint") and self.dataset.has_labels

        pred_poses, gt_poses, pred_rels, gt_rels = [], [], [], []
        confusion = np.zeros((self.cfg.num_classes, self.cfg.num_classes), dtype=np.int64)
        path_length = 0.0

        for seq in sequences:
            cache = TemporalFeatureCache.empty()
            rels = gt_relatives(seq.poses)
            path_length += seq.path_length()
            for i in range(len(seq)):
                img_t = seq.rgb[i:i + 1]
                img_prev = seq.rgb[i - 1:i] if i > 0 else img_t
                pose = rel = logits = labels = None

                if not oracle:
                    with no_grad():
                        if task == "joint":
                            out = forward_joint(model, Tensor(img_prev), Tensor(img_t), seq.depth[i:i + 1], self.K, cache)
                            cache = out.cache
                            pose, rel, logits = out.pose, out.odometry, out.logits
                        elif task == "loc":
                            pose, s5 = forward_global_pose(model, Tensor(img_t), cache)
                            cache = TemporalFeatureCache(pose_features=s5.detach(), prev_pose=pose.normalized().detach())
                        elif task == "vo":
                            rel = forward_odometry(model, Tensor(img_prev), Tensor(img_t))
                        else:
                            logits = forward_segmentation(model, Tensor(img_t), TemporalFeatureCache.empty()).logits
                    pose = pose.normalized().to_poses()[0] if pose is not None else None
                    rel = rel.normalized().to_poses(RelativePose)[0] if rel is not None else None
                    labels = logits.values[0].argmax(axis=-1) if logits is not None else None
                else:
                    pose = seq.poses[i]
                    rel = rels[i - 1] if i > 0 else None
                    labels = seq.labels[i] if with_seg else None

                if with_loc:
                    pred_poses.append(pose)
                    gt_poses.append(seq.poses[i])
                if with_vo and i > 0:
                    pred_rels.append(rel)
                    gt_rels.append(rels[i - 1])
                if with_seg:
                    confusion += confusion_counts(labels, seq.labels[i], self.cfg.num_classes)

        frames = sum(len(s) for s in sequences)
        loc = localization_report(pred_poses, gt_poses) if with_loc else None
        odo = vo_drift(pred_rels, gt_rels, path_length) if with_vo and gt_rels else None
        seg = iou_from_confusion(confusion) if with_seg else None
        logger.info(
            f"Evaluated {task} on {split}: {frames} frames"
            + (f", median {loc.median_translation:.3f} m / {loc.median_rotation:.2f} deg" if loc else "")
            + (f", drift {odo.translational_drift:.2f}%" if odo else "")
            + (f", mIoU {seg.mean_iou:.3f}" if seg else "")
        )
        return Evaluation(task, loc, odo, seg, pred_poses, gt_poses, frames, [s.name for s in sequences])


# ---------------------------------
# Stage drivers
# ---------------------------------
def train_single_task(task: str, dataset: DatasetIndex, config: RunConfig, out_dir: str | Path,
                      steps: int, init: str | Path | None = None) -> TrainResult:
    return Trainer(dataset, config, out_dir).train_single_task(task, steps, init)


def train_joint(dataset: DatasetIndex, init_checkpoints: Mapping[str, str | Path] | None, config: RunConfig,
                out_dir: str | Path, steps: int) -> TrainResult:
    return Trainer(dataset, config, out_dir).train_joint(steps, init_checkpoints)


def run_pipeline(dataset: DatasetIndex, config: RunConfig, out_dir: str | Path,
                 single_steps: int, joint_steps: int) -> TrainResult:
    """seg → vo (from seg) → loc (from vo) → joint (from all three)."""
    trainer = Trainer(dataset, config, out_dir)
    seg = trainer.train_single_task("seg", single_steps)
    vo = trainer.train_single_task("vo", single_steps, init=seg.checkpoint)
    loc = trainer.train_single_task("loc", single_steps, init=vo.checkpoint)
    return trainer.train_joint(
        joint_steps, {"loc": loc.checkpoint, "vo": vo.checkpoint, "seg": seg.checkpoint}
    )


def compare_fusion_ablation(dataset: DatasetIndex, config: RunConfig, out_dir: str | Path,
                            single_steps: int, joint_steps: int) -> dict:
    """Median held-out translation error of the fused joint model against the fusion-disabled one."""
    out_dir = Path(out_dir)
    fused_mode = config.fusion_mode if config.fusion_mode != "none" else "adaptive"
    results = {}
    for label, mode in (("fusion", fused_mode), ("no_fusion", "none")):
        cfg = config.updated(fusion_mode=mode)
        joint = run_pipeline(dataset, cfg, out_dir / label, single_steps, joint_steps)
        evaluation = Trainer(dataset, cfg, out_dir / label).evaluate(joint.model, "joint", "test")
        results[label] = evaluation.localization.median_translation
    results["ratio"] = results["fusion"] / max(results["no_fusion"], 1e-12)
    logger.info(
        f"Fusion ablation: fused {results['fusion']:.3f} m vs unfused {results['no_fusion']:.3f} m "
        f"(ratio {results['ratio']:.3f})"
    )
    return results

from src.trainer.adam import AdamState, adam_step, clip_by_global_norm
from src.trainer.batching import FrameBatcher, SegmentBatcher
from src.trainer.trainer import (
    TASKS,
    Evaluation,
    Trainer,
    TrainResult,
    build_model,
    compare_fusion_ablation,
    joint_terms,
    joint_unreached,
    load_model,
    run_pipeline,
    train_joint,
    train_single_task,
    unreached_parameters,
)

__all__ = [
    "AdamState",
    "Evaluation",
    "FrameBatcher",
    "SegmentBatcher",
    "TASKS",
    "TrainResult",
    "Trainer",
    "adam_step",
    "build_model",
    "clip_by_global_norm",
    "compare_fusion_ablation",
    "joint_terms",
    "joint_unreached",
    "load_model",
    "run_pipeline",
    "train_joint",
    "train_single_task",
    "unreached_parameters",
]

from src.networks.checkpoint import load_checkpoint, load_into, save_checkpoint
from src.networks.model import (
    EncoderConfig,
    JointModel,
    JointOutput,
    ModelConfig,
    TemporalFeatureCache,
    forward_global_pose,
    forward_joint,
    forward_odometry,
    forward_segmentation,
)

__all__ = [
    "EncoderConfig",
    "JointModel",
    "JointOutput",
    "ModelConfig",
    "TemporalFeatureCache",
    "forward_global_pose",
    "forward_joint",
    "forward_odometry",
    "forward_segmentation",
    "load_checkpoint",
    "load_into",
    "save_checkpoint",
]

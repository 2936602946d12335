from src.losses.pose_losses import (
    euclidean_pose_loss,
    localization_loss,
    odometry_loss,
    relative_motion_loss,
)
from src.losses.pose_terms import TRAINING_NORM_EPS, PoseBatch, PosePrediction
from src.losses.segmentation import pixel_class_probability, segmentation_loss
from src.losses.uncertainty import UncertaintyWeights, multitask_loss, weighted_term

__all__ = [
    "TRAINING_NORM_EPS",
    "PoseBatch",
    "PosePrediction",
    "UncertaintyWeights",
    "euclidean_pose_loss",
    "localization_loss",
    "multitask_loss",
    "odometry_loss",
    "pixel_class_probability",
    "relative_motion_loss",
    "segmentation_loss",
    "weighted_term",
]

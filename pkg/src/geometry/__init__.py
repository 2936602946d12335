from src.geometry.camera import CameraIntrinsics, project, unproject
from src.geometry.pose import (
    Pose,
    RelativePose,
    camera_motion,
    compose_camera_motion,
    pose_to_transform,
    relative_pose_target,
)
from src.geometry.quaternion import (
    Quaternion,
    angular_error_deg,
    quat_canonicalize,
    quat_inverse,
    quat_multiply,
    quat_normalize,
    quat_to_rotation_matrix,
)

__all__ = [
    "CameraIntrinsics",
    "Pose",
    "Quaternion",
    "RelativePose",
    "angular_error_deg",
    "camera_motion",
    "compose_camera_motion",
    "pose_to_transform",
    "project",
    "quat_canonicalize",
    "quat_inverse",
    "quat_multiply",
    "quat_normalize",
    "quat_to_rotation_matrix",
    "relative_pose_target",
    "unproject",
]

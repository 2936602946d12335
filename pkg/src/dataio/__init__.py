from src.dataio.config import RunConfig, read_config
from src.dataio.dataset import DatasetIndex, FrameRecord, SequenceFrames, load_dataset
from src.dataio.frame_io import read_frame, write_frame
from src.dataio.pose_io import parse_pose_file, write_pose_file

__all__ = [
    "DatasetIndex",
    "FrameRecord",
    "RunConfig",
    "SequenceFrames",
    "load_dataset",
    "parse_pose_file",
    "read_config",
    "read_frame",
    "write_frame",
    "write_pose_file",
]

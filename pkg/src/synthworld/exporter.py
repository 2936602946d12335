"""
exporter.py
-----------
Render a trajectory and write it as a dataset (see ``src.dataio.dataset``).

Frames are rendered on a bounded thread pool and written in index order by
the calling thread, so the files on disk never depend on scheduling.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from tqdm import tqdm

from src.dataio.dataset import DatasetIndex, FrameRecord, loop_split, sequence_name
from src.dataio.frame_io import write_frame
from src.geometry.camera import CameraIntrinsics
from src.synthworld.renderer import render_frame
from src.synthworld.scene import CLASS_NAMES, SceneSpec
from src.synthworld.trajectory import TrajectorySpec
from src.utils.log import ProgressReporter, get_logger

logger = get_logger(__name__)


def export_dataset(
    scene: SceneSpec,
    traj: TrajectorySpec,
    K: CameraIntrinsics,
    out_dir: str | Path,
    workers: int = 2,
    show_progress: bool = False,
) -> DatasetIndex:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc.strerror}") from exc

    index = DatasetIndex(
        root=out_dir,
        intrinsics=K,
        palette=CLASS_NAMES,
        scene=scene.as_dict(),
        trajectory={
            "loops": traj.loops,
            "frames_per_loop": traj.frames_per_loop,
            "camera_height": traj.camera_height,
        },
    )

    jobs = []
    for i, pose in enumerate(traj.poses):
        loop = traj.loop_of(i)
        record = FrameRecord.at(out_dir, sequence_name(loop), i - loop * traj.frames_per_loop, pose)
        index.sequences.setdefault(record.sequence, []).append(record)
        jobs.append(record)
    index.splits.update(loop_split(traj.loops))

    total = len(jobs)
    progress = ProgressReporter(logger, total, every=max(total // 10, 1), label="frame")
    bar = tqdm(total=total, desc="Rendering", unit="frame", disable=not show_progress)

    # bounded look-ahead: at most 2·workers rendered frames wait in memory
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pending = deque()
        queue = iter(jobs)
        for record in queue:
            pending.append((record, pool.submit(render_frame, scene, record.pose, K)))
            if len(pending) >= 2 * max(1, workers):
                break
        done = 0
        while pending:
            record, future = pending.popleft()
            frame = future.result()
            try:
                write_frame(record, frame)
            except OSError as exc:
                raise OSError(f"failed writing frame {record.sequence}/{record.index} under {out_dir}: {exc}") from exc
            done += 1
            bar.update(1)
            progress.update(done)
            nxt = next(queue, None)
            if nxt is not None:
                pending.append((nxt, pool.submit(render_frame, scene, nxt.pose, K)))
    bar.close()

    index.write_manifest()
    logger.info(
        f"Dataset written: {out_dir} ({total} frames, {len(index.sequences)} sequences, "
        f"train={index.sequence_names('train')}, test={index.sequence_names('test')})"
    )
    return index

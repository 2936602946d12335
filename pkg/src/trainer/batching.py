"""
batching.py
-----------
Deterministic batch streams.

Pose and joint training walk ``batch`` parallel segments of
``segment_length`` consecutive frames. Each optimizer step consumes one
frame pair (t−1, t) from every segment; the first pair of a fresh set of
segments is flagged ``reset`` so the caller clears its temporal cache.
Segments are drawn at random (seeded) from the training sequences, so
shuffling happens at segment level and frame order inside a segment is
always temporal.

Segmentation pretraining uses independent single frames with optional
photometric / flip augmentation and random crops resized back to the
frame size (nearest neighbour, so labels stay class ids).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from src.dataio.dataset import SequenceFrames
from src.geometry.pose import Pose, relative_pose_target
from src.utils.errors import DataFormatError


@dataclass
class PairBatch:
    img_prev: np.ndarray        # (B, H, W, 3)
    img_curr: np.ndarray        # (B, H, W, 3)
    depth_curr: np.ndarray      # (B, H, W)
    labels_curr: np.ndarray     # (B, H, W)
    pose_prev: list
    pose_curr: list
    reset: bool

    @property
    def gt_rel(self) -> list:
        return [relative_pose_target(a, b) for a, b in zip(self.pose_prev, self.pose_curr)]


@dataclass
class FrameBatch:
    img: np.ndarray             # (B, H, W, 3)
    labels: np.ndarray          # (B, H, W)
    poses: list


class SegmentBatcher:
    def __init__(self, sequences: Sequence[SequenceFrames], batch: int, segment_length: int, seed: int):
        self.sequences = list(sequences)
        self.batch = batch
        self.segment_length = segment_length
        self.rng = np.random.default_rng(seed)
        self.starts = [
            (s, start)
            for s, seq in enumerate(self.sequences)
            for start in range(0, len(seq) - segment_length + 1)
        ]
        if not self.starts:
            longest = max((len(s) for s in self.sequences), default=0)
            raise DataFormatError(
                f"no training segment of length {segment_length} fits (longest sequence has {longest} frames)"
            )

    def _draw(self) -> list[tuple[int, int]]:
        picks = self.rng.choice(len(self.starts), size=self.batch, replace=len(self.starts) < self.batch)
        return [self.starts[i] for i in picks]

    def _pair(self, segments, offset: int, reset: bool) -> PairBatch:
        rows_prev = [(self.sequences[s], start + offset - 1) for s, start in segments]
        rows_curr = [(self.sequences[s], start + offset) for s, start in segments]
        return PairBatch(
            img_prev=np.stack([seq.rgb[i] for seq, i in rows_prev]),
            img_curr=np.stack([seq.rgb[i] for seq, i in rows_curr]),
            depth_curr=np.stack([seq.depth[i] for seq, i in rows_curr]),
            labels_curr=np.stack([seq.labels[i] for seq, i in rows_curr]),
            pose_prev=[seq.poses[i] for seq, i in rows_prev],
            pose_curr=[seq.poses[i] for seq, i in rows_curr],
            reset=reset,
        )

    def __iter__(self) -> Iterator[PairBatch]:
        while True:
            segments = self._draw()
            for offset in range(1, self.segment_length):
                yield self._pair(segments, offset, reset=offset == 1)


def crop_resize(frame: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of ``frame[top:top+height, left:left+width]`` back to the frame size."""
    H, W = frame.shape[:2]
    rows = top + ((np.arange(H) + 0.5) * height / H).astype(int)
    cols = left + ((np.arange(W) + 0.5) * width / W).astype(int)
    return frame[rows][:, cols]


def augment_frames(
    img: np.ndarray, labels: np.ndarray, rng: np.random.Generator, crop_min_scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-frame random crop (side fraction drawn from [crop_min_scale, 1];
    skipped at 1), horizontal flip, brightness shift and contrast scaling.
    """
    img = img.copy()
    labels = labels.copy()
    H, W = labels.shape[1:]
    for i in range(img.shape[0]):
        if crop_min_scale < 1.0:
            scale = rng.uniform(crop_min_scale, 1.0)
            h, w = max(1, round(scale * H)), max(1, round(scale * W))
            top, left = int(rng.integers(0, H - h + 1)), int(rng.integers(0, W - w + 1))
            img[i] = crop_resize(img[i], top, left, h, w)
            labels[i] = crop_resize(labels[i], top, left, h, w)
        if rng.random() < 0.5:
            img[i] = img[i, :, ::-1]
            labels[i] = labels[i, :, ::-1]
        brightness = rng.uniform(-0.1, 0.1)
        contrast = rng.uniform(0.8, 1.2)
        mean = img[i].mean()
        img[i] = np.clip((img[i] - mean) * contrast + mean + brightness, 0.0, 1.0)
    return img, labels


class FrameBatcher:
    def __init__(
        self,
        sequences: Sequence[SequenceFrames],
        batch: int,
        seed: int,
        augment: bool = False,
        crop_min_scale: float = 1.0,
    ):
        self.sequences = list(sequences)
        self.batch = batch
        self.augment = augment
        self.crop_min_scale = crop_min_scale
        self.rng = np.random.default_rng(seed)
        self.frames = [(s, i) for s, seq in enumerate(self.sequences) for i in range(len(seq))]
        if not self.frames:
            raise DataFormatError("no training frames")

    def __iter__(self) -> Iterator[FrameBatch]:
        while True:
            picks = self.rng.choice(len(self.frames), size=self.batch, replace=len(self.frames) < self.batch)
            rows = [self.frames[k] for k in picks]
            img = np.stack([self.sequences[s].rgb[i] for s, i in rows])
            labels = np.stack([self.sequences[s].labels[i] for s, i in rows])
            if self.augment:
                img, labels = augment_frames(img, labels, self.rng, self.crop_min_scale)
            yield FrameBatch(img, labels, [self.sequences[s].poses[i] for s, i in rows])


def gt_relatives(poses: Sequence[Pose]) -> list:
    return [relative_pose_target(a, b) for a, b in zip(poses, poses[1:])]

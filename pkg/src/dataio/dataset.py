"""
dataset.py
----------
On-disk dataset layout (version 1):

    <ds>/manifest                              YAML: intrinsics, palette, splits
    <ds>/seq-NN/frame-NNNNNN.color.png
    <ds>/seq-NN/frame-NNNNNN.depth.png
    <ds>/seq-NN/frame-NNNNNN.label.png
    <ds>/seq-NN/frame-NNNNNN.pose.txt

One sequence per trajectory loop; frame indices restart at 0 in every
sequence and follow temporal order. Splits are whole sequences.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from src.dataio.atomic import atomic_write_text
from src.dataio.frame_io import IMAGE_EXT, read_frame
from src.geometry.camera import CameraIntrinsics
from src.geometry.pose import Pose
from src.utils.errors import DataFormatError, GeometryError
from src.utils.log import get_logger

logger = get_logger(__name__)

MANIFEST_NAME = "manifest"
MANIFEST_FORMAT = "vloc-dataset"
MANIFEST_VERSION = 1
SPLITS = ("train", "test")
TEST_FRACTION = 0.3


def sequence_name(i: int) -> str:
    return f"seq-{i:02d}"


def frame_stem(i: int) -> str:
    return f"frame-{i:06d}"


@dataclass(frozen=True)
class FrameRecord:
    sequence: str
    index: int
    rgb_path: Path
    depth_path: Path
    label_path: Path
    pose_path: Path
    pose: Pose | None = None

    @classmethod
    def at(cls, root: str | Path, sequence: str, index: int, pose: Pose | None = None) -> "FrameRecord":
        if index < 0:
            raise DataFormatError(f"frame index must be non-negative, got {index}")
        base = Path(root) / sequence / frame_stem(index)
        return cls(
            sequence=sequence,
            index=index,
            rgb_path=base.with_name(f"{base.name}.color.{IMAGE_EXT}"),
            depth_path=base.with_name(f"{base.name}.depth.{IMAGE_EXT}"),
            label_path=base.with_name(f"{base.name}.label.{IMAGE_EXT}"),
            pose_path=base.with_name(f"{base.name}.pose.txt"),
            pose=pose,
        )

    def paths(self) -> tuple[Path, ...]:
        return (self.rgb_path, self.depth_path, self.label_path, self.pose_path)


@dataclass
class SequenceFrames:
    """All frames of one sequence stacked into arrays (temporal order)."""

    name: str
    rgb: np.ndarray          # (T, H, W, 3)
    depth: np.ndarray        # (T, H, W)
    labels: np.ndarray       # (T, H, W)
    poses: list

    def __len__(self) -> int:
        return len(self.poses)

    def path_length(self) -> float:
        return float(sum(np.linalg.norm(b.translation - a.translation) for a, b in zip(self.poses, self.poses[1:])))


@dataclass
class DatasetIndex:
    root: Path
    intrinsics: CameraIntrinsics
    palette: tuple
    sequences: dict = field(default_factory=dict)     # name -> list[FrameRecord]
    splits: dict = field(default_factory=dict)        # name -> "train" | "test"
    has_labels: bool = True
    scene: dict = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    _loaded: dict = field(default_factory=dict, repr=False)

    @property
    def num_classes(self) -> int:
        return len(self.palette)

    @property
    def size(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width

    def __len__(self) -> int:
        return sum(len(records) for records in self.sequences.values())

    def sequence_names(self, split: str | None = None) -> list[str]:
        if split is not None and split not in SPLITS:
            raise DataFormatError(f"unknown split {split!r}; expected one of {SPLITS}")
        return [name for name in sorted(self.sequences) if split is None or self.splits.get(name) == split]

    def records(self, split: str | None = None) -> list[FrameRecord]:
        return [r for name in self.sequence_names(split) for r in self.sequences[name]]

    # ---------------------------------
    # Frame loading
    # ---------------------------------
    def load_sequence(self, name: str, workers: int = 1) -> SequenceFrames:
        """Reads (and memoizes) every frame of one sequence; ``workers`` threads decode the PNGs."""
        if name in self._loaded:
            return self._loaded[name]
        if name not in self.sequences:
            raise DataFormatError(f"{self.root}: no sequence named {name!r}")

        records = self.sequences[name]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                frames = list(pool.map(lambda r: read_frame(r, self.size, with_labels=self.has_labels), records))
        else:
            frames = [read_frame(r, self.size, with_labels=self.has_labels) for r in records]
        h, w = self.size
        labels = (
            np.stack([f.labels for f in frames]) if self.has_labels
            else np.zeros((len(frames), h, w), dtype=np.uint8)
        )
        seq = SequenceFrames(
            name=name,
            rgb=np.stack([f.rgb for f in frames]),
            depth=np.stack([f.depth for f in frames]),
            labels=labels,
            poses=[f.pose for f in frames],
        )
        self._loaded[name] = seq
        return seq

    def load_split(self, split: str, workers: int = 1) -> list[SequenceFrames]:
        names = self.sequence_names(split)
        if not names:
            raise DataFormatError(f"{self.root}: split {split!r} has no sequences")
        return [self.load_sequence(n, workers) for n in names]

    # ---------------------------------
    # Manifest
    # ---------------------------------
    def manifest(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "image_ext": IMAGE_EXT,
            "intrinsics": self.intrinsics.as_dict(),
            "palette": list(self.palette),
            "has_labels": self.has_labels,
            "scene": self.scene,
            "trajectory": self.trajectory,
            "sequences": [
                {"name": name, "split": self.splits.get(name, "train"), "frames": len(self.sequences[name])}
                for name in sorted(self.sequences)
            ],
        }

    def write_manifest(self) -> Path:
        text = yaml.safe_dump(self.manifest(), sort_keys=False, default_flow_style=False)
        return atomic_write_text(self.root / MANIFEST_NAME, text)


def loop_split(loops: int, test_fraction: float = TEST_FRACTION) -> dict:
    """Last ``max(1, round(test_fraction·loops))`` loops are held out; at least one stays in train."""
    n_test = max(1, int(round(test_fraction * loops)))
    n_test = min(n_test, loops - 1)
    return {sequence_name(i): ("test" if i >= loops - n_test else "train") for i in range(loops)}


def load_dataset(root: str | Path) -> DatasetIndex:
    root = Path(root)
    path = root / MANIFEST_NAME
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read manifest ({exc.strerror})") from exc
    except yaml.YAMLError as exc:
        raise DataFormatError(f"{path}: manifest is not valid YAML ({exc})") from exc

    if not isinstance(raw, dict) or raw.get("format") != MANIFEST_FORMAT:
        raise DataFormatError(f"{path}: not a {MANIFEST_FORMAT} manifest")
    if raw.get("version") != MANIFEST_VERSION:
        raise DataFormatError(f"{path}: unsupported manifest version {raw.get('version')!r}")
    if raw.get("image_ext", IMAGE_EXT) != IMAGE_EXT:
        raise DataFormatError(f"{path}: unsupported image extension {raw.get('image_ext')!r}")

    try:
        intrinsics = CameraIntrinsics(**raw["intrinsics"])
        entries = raw["sequences"]
        palette = tuple(raw["palette"])
    except (KeyError, TypeError, GeometryError) as exc:
        raise DataFormatError(f"{path}: malformed manifest ({exc})") from exc

    index = DatasetIndex(
        root=root,
        intrinsics=intrinsics,
        palette=palette,
        has_labels=bool(raw.get("has_labels", True)),
        scene=raw.get("scene") or {},
        trajectory=raw.get("trajectory") or {},
    )
    for entry in entries:
        try:
            name, split, count = entry["name"], entry["split"], int(entry["frames"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}: malformed sequence entry {entry!r}") from exc
        if split not in SPLITS:
            raise DataFormatError(f"{path}: sequence {name} has unknown split {split!r}")
        records = [FrameRecord.at(root, name, i) for i in range(count)]
        missing = [p for r in records for p in r.paths() if not p.exists() and (index.has_labels or p != r.label_path)]
        if missing:
            raise DataFormatError(f"{path}: sequence {name} is missing {len(missing)} files, first {missing[0]}")
        index.sequences[name] = records
        index.splits[name] = split

    logger.debug(f"Loaded dataset {root}: {len(index.sequences)} sequences, {len(index)} frames")
    return index

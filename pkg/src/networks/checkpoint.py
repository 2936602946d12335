"""
checkpoint.py
-------------
Model checkpoints: a numpy ``.npz`` container of named float64 arrays.

Format (version 1)
    __format__   : int array [1]
    __meta__     : UTF-8 JSON bytes (run configuration, task, step count)
    <param name> : row-major float64 array, one entry per parameter

Writes go to a temporary file in the target directory and are renamed into
place, so an interrupted save never leaves a truncated checkpoint.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from src.dataio.atomic import atomic_path
from src.utils.errors import CheckpointError
from src.utils.log import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1
_FORMAT_KEY = "__format__"
_META_KEY = "__meta__"


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    arrays = {name: np.asarray(v, dtype=np.float64) for name, v in params.items()}
    arrays[_FORMAT_KEY] = np.array([FORMAT_VERSION])
    arrays[_META_KEY] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8)

    with atomic_path(path) as tmp, open(tmp, "wb") as fh:
        np.savez(fh, **arrays)

    logger.info(f"Checkpoint written: {path} ({len(params)} tensors)")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    version = arrays.pop(_FORMAT_KEY, None)
    if version is None or int(version[0]) != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {version}")
    meta = json.loads(arrays.pop(_META_KEY).tobytes().decode("utf-8")) if _META_KEY in arrays else {}
    return arrays, meta


def shape_diff(expected: dict, found: dict) -> list[str]:
    lines = []
    for name in sorted(set(expected) | set(found)):
        if name not in found:
            lines.append(f"missing {name} {tuple(expected[name].shape)}")
        elif name not in expected:
            lines.append(f"unexpected {name} {tuple(found[name].shape)}")
        elif tuple(expected[name].shape) != tuple(found[name].shape):
            lines.append(f"{name}: expected {tuple(expected[name].shape)}, found {tuple(found[name].shape)}")
    return lines


def load_into(params: dict, arrays: dict[str, np.ndarray], strict: bool = True, source: str = "checkpoint") -> list[str]:
    """
    Copy ``arrays`` into the parameter tensors ``params`` (name → Tensor).

    strict : every parameter must be present with the same shape; otherwise
             ``CheckpointError`` lists the shape diff. Non-strict loads copy
             the matching entries and return the names that were loaded.
    """
    expected = {name: t.values for name, t in params.items()}
    diff = shape_diff(expected, arrays)
    if strict and diff:
        raise CheckpointError(f"{source} is incompatible with the model:\n  " + "\n  ".join(diff))

    loaded = []
    for name, t in params.items():
        if name in arrays and arrays[name].shape == t.values.shape:
            t.values = np.array(arrays[name], dtype=np.float64)
            loaded.append(name)
    return loaded

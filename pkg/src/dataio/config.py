"""
config.py
---------
Run configuration: a flat ``key = value`` text file, one setting per line,
``#`` starts a comment. Every key must be a ``RunConfig`` field; values are
converted by the field's declared type (int, real, string, bool).

    # joint fine-tuning
    lr_joint = 1e-4
    batch = 8
    fusion_mode = adaptive
"""

from __future__ import annotations

from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.fusion.adaptive_fusion import FUSION_MODES
from src.utils.errors import ConfigError

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(" ", "").split(",") if part)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    # optimizer
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-10, gt=0.0)
    lr_single: float = Field(1e-3, gt=0.0)
    lr_joint: float = Field(1e-4, gt=0.0)
    grad_clip_norm: float = Field(10.0, gt=0.0)

    # batching
    batch: int = Field(8, ge=1)
    segment_length: int = Field(8, ge=2)
    seed: int = 7

    # model
    input_size: int = Field(64, gt=0)
    stage_channels: str = "8,16,24,32,48"
    head_hidden: int = Field(64, ge=1)
    num_classes: int = Field(4, ge=2)
    dropout: float = Field(0.2, ge=0.0, lt=1.0)
    warp_fusion_stages: str = "3,4"
    share_seg_encoder: bool = True
    fusion_mode: str = "adaptive"
    s_rotation_init: float = -3.0
    calibrate_task_weights: bool = True

    # data / runtime
    augment_segmentation: bool = False
    crop_min_scale: float = Field(1.0, gt=0.0, le=1.0)
    log_every: int = Field(25, ge=1)
    prefetch_workers: int = Field(2, ge=1)

    @field_validator("stage_channels")
    @classmethod
    def _check_stage_channels(cls, v: str) -> str:
        channels = _int_tuple(v)
        if len(channels) != 5 or min(channels) <= 0:
            raise ValueError("expected five positive comma-separated channel counts")
        return v

    @field_validator("warp_fusion_stages")
    @classmethod
    def _check_warp_stages(cls, v: str) -> str:
        if _int_tuple(v) not in ((3, 4), (4, 5)):
            raise ValueError("expected '3,4' or '4,5'")
        return v

    @field_validator("fusion_mode")
    @classmethod
    def _check_fusion_mode(cls, v: str) -> str:
        if v not in FUSION_MODES:
            raise ValueError(f"expected one of {', '.join(FUSION_MODES)}")
        return v

    @property
    def stage_channel_tuple(self) -> tuple[int, ...]:
        return _int_tuple(self.stage_channels)

    @property
    def warp_fusion_stage_tuple(self) -> tuple[int, ...]:
        return _int_tuple(self.warp_fusion_stages)

    def updated(self, **changes) -> "RunConfig":
        """Validated copy with ``changes`` applied."""
        return build_config({**self.model_dump(), **changes})


def build_config(values: dict) -> RunConfig:
    for key in values:
        if key not in RunConfig.model_fields:
            raise ConfigError(key, "unknown setting")
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        err = exc.errors()[0]
        key = str(err["loc"][0]) if err.get("loc") else "?"
        raise ConfigError(key, err["msg"]) from exc


def _convert(key: str, raw: str):
    annotation = RunConfig.model_fields[key].annotation
    if annotation is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(key, f"expected a boolean, got {raw!r}")
    if annotation is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got {raw!r}") from None
    if annotation is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(key, f"expected a real number, got {raw!r}") from None
    return raw


def parse_config_text(text: str) -> RunConfig:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in RunConfig.model_fields:
            raise ConfigError(key, "unknown setting")
        values[key] = _convert(key, raw.strip("'\""))
    return build_config(values)


def read_config(path: str | Path | None) -> RunConfig:
    """``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file ({exc.strerror})") from exc
    return parse_config_text(text)


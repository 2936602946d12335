"""
model.py
--------
Joint toy network: shared encoder trunk (stages 1–3), global pose stream,
dual-stream odometry, and a warp-fused encoder–decoder segmentation stream.

Topology of one joint step (frames t−1, t):

    trunk(I_t) ──┬── pose stage4 ─[fuse seg stage4]─ pose stage5 ─[fuse cached stage5]─ head → x, q
                 ├── odom curr stage4 ─┐
    I_{t−1} → odom prev stages 1–4 ───┴ concat → odom stage5 → head → Δx, Δq
                 └── seg stages (warp-fused with cached features) → decoder → logits
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.fusion.adaptive_fusion import FusionLayer
from src.geometry.camera import CameraIntrinsics
from src.geometry.pose import RelativePose, camera_motion
from src.geometry.quaternion import Quaternion
from src.losses.pose_terms import PoseBatch, PosePrediction
from src.networks.layers import Conv2d, Deconv, Dropout, Linear, Module, Stages
from src.utils.errors import ShapeError
from src.utils.log import get_logger
from src.warp.warper import FeatureWarper

logger = get_logger(__name__)

N_STAGES = 5
NEAR_IDENTITY_ROTATION_SCALE = 0.05


# ── Configuration ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class EncoderConfig:
    input_size: int = 64
    stage_channels: tuple = (8, 16, 24, 32, 48)

    def __post_init__(self):
        if len(self.stage_channels) != N_STAGES or min(self.stage_channels) <= 0:
            raise ShapeError(f"need {N_STAGES} positive stage channel counts, got {self.stage_channels}")
        if self.input_size % (2 ** N_STAGES):
            raise ShapeError(f"input size {self.input_size} is not divisible by {2 ** N_STAGES}")

    def channels(self, stage: int) -> int:
        return self.stage_channels[stage - 1]

    def resolution(self, stage: int) -> int:
        return self.input_size // (2 ** stage)


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head_hidden: int = 64
    num_classes: int = 4
    dropout: float = 0.2
    fusion_mode: str = "adaptive"
    warp_fusion_stages: tuple = (3, 4)
    share_seg_encoder: bool = True
    seed: int = 7

    def __post_init__(self):
        if tuple(self.warp_fusion_stages) not in ((3, 4), (4, 5)):
            raise ShapeError(f"warp fusion stages must be (3, 4) or (4, 5), got {self.warp_fusion_stages}")

    @property
    def seg_depth(self) -> int:
        return max(4, max(self.warp_fusion_stages))

    @classmethod
    def from_run_config(cls, cfg) -> "ModelConfig":
        return cls(
            encoder=EncoderConfig(cfg.input_size, cfg.stage_channel_tuple),
            head_hidden=cfg.head_hidden,
            num_classes=cfg.num_classes,
            dropout=cfg.dropout,
            fusion_mode=cfg.fusion_mode,
            warp_fusion_stages=cfg.warp_fusion_stage_tuple,
            share_seg_encoder=cfg.share_seg_encoder,
            seed=cfg.seed,
        )


# ── State carried between timesteps ──────────────────────────────────────────

@dataclass
class TemporalFeatureCache:
    """
    Previous-timestep state of one batch of sequences. Empty at a sequence
    start; all tensors are detached constants.
    """

    pose_features: Tensor | None = None
    prev_pose: PoseBatch | None = None
    seg_features: dict = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return self.pose_features is None and self.prev_pose is None and not self.seg_features

    @classmethod
    def empty(cls) -> "TemporalFeatureCache":
        return cls()


@dataclass
class SegmentationOutput:
    logits: Tensor
    stage_features: dict            # current-path encoder features per stage (pre-fusion)
    pose_features: Tensor           # stage-4 features offered to the pose stream


@dataclass
class JointOutput:
    pose: PosePrediction
    odometry: PosePrediction
    logits: Tensor
    cache: TemporalFeatureCache


# ── Sub-networks ─────────────────────────────────────────────────────────────

class PoseHead(Module):
    """Global average pool → fc(hidden) → ELU → fc(3) translation, fc(4) rotation."""

    def __init__(self, c_in: int, hidden: int, dropout: float, rng: np.random.Generator, near_identity: bool = False):
        super().__init__()
        self.fc1 = self.child("fc1", Linear(c_in, hidden, rng))
        self.fc_t = self.child("fc_t", Linear(hidden, 3, rng))
        self.fc_q = self.child("fc_q", Linear(hidden, 4, rng))
        # identity-leaning rotation bias keeps early predictions away from the zero quaternion
        self.fc_q.b.values[0] = 1.0
        if near_identity:
            # zero translation and a small rotation for any input
            self.fc_t.W.values[:] = 0.0
            self.fc_q.W.values *= NEAR_IDENTITY_ROTATION_SCALE
        self.dropout = Dropout(dropout, np.random.default_rng(rng.integers(2**63)))

    def __call__(self, feats: Tensor, training: bool) -> PosePrediction:
        h = self.dropout(ops.spatial_mean(feats), training)
        h = self.dropout(ops.elu(self.fc1(h)), training)
        return PosePrediction(self.fc_t(h), self.fc_q(h))


class SegDecoder(Module):
    """Two transposed-convolution upsampling steps with a 1×1 skip from stage 3."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        enc = cfg.encoder
        deep = cfg.seg_depth
        c3 = enc.channels(3)
        self.up1 = self.child("up1", Deconv(enc.channels(deep), c3, 2 ** (deep - 3), rng))
        self.skip = self.child("skip", Conv2d(c3, c3, 1, 1, rng))
        self.up2 = self.child("up2", Deconv(c3, cfg.num_classes, 8, rng))

    def __call__(self, deep: Tensor, stage3: Tensor) -> Tensor:
        h = ops.elu(ops.add(self.up1(deep), self.skip(stage3)))
        return self.up2(h)


class JointModel(Module):
    """
    Parameters
    ----------
    cfg : model topology and seed. All parameters are drawn from one RNG
          stream seeded by ``cfg.seed`` so construction is deterministic.
    """

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.training = True
        enc = self.cfg.encoder
        ch = enc.channels
        rng = np.random.default_rng(self.cfg.seed)

        def seed() -> int:
            return int(rng.integers(2**31))

        trunk_spec = [(1, 3, ch(1)), (2, ch(1), ch(2)), (3, ch(2), ch(3))]
        self.trunk = self.child("trunk", Stages(trunk_spec, rng))

        # global pose stream
        self.pose = self.child("pose", Module())
        self.pose_stages = self.pose.child("enc", Stages([(4, ch(3), ch(4)), (5, ch(4), ch(5))], rng))
        self.pose_head = self.pose.child("head", PoseHead(ch(5), self.cfg.head_hidden, self.cfg.dropout, rng))

        # odometry: previous-image stream has its own stages 1–4; the current
        # image reuses the shared trunk and adds its own stage 4
        self.odom = self.child("odom", Module())
        self.odom_prev = self.odom.child("prev", Stages(trunk_spec + [(4, ch(3), ch(4))], rng))
        self.odom_curr = self.odom.child("curr", Stages([(4, ch(3), ch(4))], rng))
        self.odom_joint = self.odom.child("joint", Stages([(5, 2 * ch(4), ch(5))], rng))
        self.odom_head = self.odom.child("head", PoseHead(ch(5), self.cfg.head_hidden, 0.0, rng, near_identity=True))

        # segmentation
        self.seg = self.child("seg", Module())
        self.seg_trunk = self.trunk
        if not self.cfg.share_seg_encoder:
            self.seg_trunk = self.seg.child("trunk", Stages(trunk_spec, rng))
        deep_spec = [(k, ch(k - 1), ch(k)) for k in range(4, self.cfg.seg_depth + 1)]
        self.seg_stages = self.seg.child("enc", Stages(deep_spec, rng))
        self.seg_decoder = self.seg.child("decoder", SegDecoder(self.cfg, rng))

        # fusion sites
        mode = self.cfg.fusion_mode
        self.fusion = self.child("fusion", Module())
        self.fuse_temporal = FusionLayer("temporal", ch(5), ch(5), ch(5), seed(), mode)
        self.fuse_semantic = FusionLayer("semantic", ch(4), ch(4), ch(4), seed(), mode)
        self.fuse_warp = {
            k: FusionLayer(f"warp{k}", ch(k), ch(k), ch(k), seed(), mode) for k in self.cfg.warp_fusion_stages
        }
        for layer in [self.fuse_temporal, self.fuse_semantic, *self.fuse_warp.values()]:
            site = self.fusion.child(layer.name, Module())
            for pname, t in layer.params.named_parameters().items():
                site._params[pname] = t

        self.uncertainty = None   # attached by the trainer (losses.UncertaintyWeights)

    # ── Modes / parameters ───────────────────────────────────────────────────

    @property
    def fusion_enabled(self) -> bool:
        return self.cfg.fusion_mode != "none"

    def train(self) -> "JointModel":
        self.training = True
        return self

    def eval(self) -> "JointModel":
        self.training = False
        return self

    def parameters(self) -> dict[str, Tensor]:
        params = self.named_parameters()
        if self.uncertainty is not None:
            params.update(self.uncertainty.named_parameters())
        return params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.parameters().items()}


# ── Forward passes ───────────────────────────────────────────────────────────

def _check_image(model: JointModel, img: Tensor) -> None:
    size = model.cfg.encoder.input_size
    if img.values.ndim != 4 or img.shape[1:] != (size, size, 3):
        raise ShapeError(f"image batch must be (N, {size}, {size}, 3), got {img.shape}")


def forward_global_pose(
    model: JointModel,
    img_t: Tensor,
    cache: TemporalFeatureCache,
    seg_feats: Tensor | None = None,
    trunk_feats: dict | None = None,
) -> tuple[PosePrediction, Tensor]:
    """Returns the raw pose prediction and the current stage-5 features."""
    _check_image(model, img_t)
    trunk = trunk_feats if trunk_feats is not None else model.trunk(img_t)

    s4 = model.pose_stages._children["stage4"](trunk[3])
    if seg_feats is not None and model.fusion_enabled:
        s4 = model.fuse_semantic(s4, seg_feats)
    s5 = model.pose_stages._children["stage5"](s4)

    fused = s5
    if cache.pose_features is not None and model.fusion_enabled:
        if cache.pose_features.shape != s5.shape:
            raise ShapeError(
                f"temporal cache holds features {cache.pose_features.shape}, current stage-5 is {s5.shape}"
            )
        fused = model.fuse_temporal(s5, cache.pose_features)

    return model.pose_head(fused, model.training), s5


def forward_odometry(
    model: JointModel,
    img_prev: Tensor,
    img_t: Tensor,
    trunk_feats: dict | None = None,
) -> PosePrediction:
    _check_image(model, img_prev)
    _check_image(model, img_t)
    prev = model.odom_prev(img_prev)[4]
    trunk = trunk_feats if trunk_feats is not None else model.trunk(img_t)
    curr = model.odom_curr(trunk[3])[4]
    joint = model.odom_joint(ops.concat_channels([prev, curr]))[5]
    return model.odom_head(joint, model.training)


def _as_relative_list(rel_pred) -> list[RelativePose]:
    if isinstance(rel_pred, PoseBatch):
        return rel_pred.to_poses(RelativePose)
    if isinstance(rel_pred, RelativePose):
        return [rel_pred]
    return list(rel_pred)


def forward_segmentation(
    model: JointModel,
    img_t: Tensor,
    cache: TemporalFeatureCache,
    rel_pred=None,
    depth_t=None,
    K: CameraIntrinsics | None = None,
    trunk_feats: dict | None = None,
) -> SegmentationOutput:
    """
    ``rel_pred`` is the odometry estimate in loss convention (world-frame
    translation difference); it is turned into camera-frame motion with the
    cached previous orientation before warping.
    """
    _check_image(model, img_t)
    if trunk_feats is None or not model.cfg.share_seg_encoder:
        trunk_feats = model.seg_trunk(img_t)

    warper = None
    if cache.seg_features and model.fusion_enabled and rel_pred is not None:
        rels = _as_relative_list(rel_pred)
        if cache.prev_pose is not None:
            prev_q = [Quaternion.from_array(q / np.linalg.norm(q)) for q in cache.prev_pose.rotation.values]
        else:
            prev_q = [Quaternion.identity()] * len(rels)
        motions = [camera_motion(r, q) for r, q in zip(rels, prev_q)]
        warper = FeatureWarper.from_depth(motions, depth_t, K)

    def _fuse(k: int, feats: Tensor) -> Tensor:
        if warper is None or k not in model.fuse_warp or k not in cache.seg_features:
            return feats
        warped = warper.warp(cache.seg_features[k], 2 ** k)
        return model.fuse_warp[k](feats, warped)

    stage_features = {3: trunk_feats[3]}
    x3 = _fuse(3, trunk_feats[3])
    x = x3
    pose_features = None
    for k, name in model.seg_stages.order:
        x = model.seg_stages._children[name](x)
        stage_features[k] = x
        x = _fuse(k, x)
        if k == 4:
            pose_features = x

    logits = model.seg_decoder(x, x3)
    return SegmentationOutput(logits, stage_features, pose_features)


def forward_joint(
    model: JointModel,
    img_prev: Tensor,
    img_t: Tensor,
    depth_t,
    K: CameraIntrinsics,
    cache: TemporalFeatureCache,
    warp_motion=None,
) -> JointOutput:
    """
    Odometry first (it drives the warping), then segmentation, then global pose.

    ``warp_motion`` replaces the detached odometry estimate as the motion the
    cached segmentation features are warped with (same forms as ``rel_pred``
    of ``forward_segmentation``). The warp grid is then independent of the
    odometry parameters.
    """
    trunk = model.trunk(img_t)

    odometry = forward_odometry(model, img_prev, img_t, trunk_feats=trunk)
    if warp_motion is None:
        warp_motion = odometry.normalized().detach().to_poses(RelativePose)

    seg = forward_segmentation(model, img_t, cache, warp_motion, depth_t, K, trunk_feats=trunk)
    pose, s5 = forward_global_pose(model, img_t, cache, seg.pose_features, trunk_feats=trunk)

    new_cache = TemporalFeatureCache(
        pose_features=s5.detach(),
        prev_pose=pose.normalized().detach(),
        seg_features={k: f.detach() for k, f in seg.stage_features.items() if k in model.fuse_warp},
    )
    return JointOutput(pose, odometry, seg.logits, new_cache)

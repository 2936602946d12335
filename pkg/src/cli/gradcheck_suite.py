"""
gradcheck_suite.py
------------------
Finite-difference audit of every backward rule the models depend on.

Groups: primitives, warp, fusion, losses, model. Each case reduces its
output to a scalar through a fixed random projection and is checked with
``src.autodiff.gradcheck.grad_check`` at float64, h = 1e-5. The downsized
joint model is audited on the entry of largest analytic gradient of every
parameter tensor (a full sweep per element would take minutes).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.autodiff import ops
from src.autodiff.gradcheck import DEFAULT_H, DEFAULT_TOL, grad_check, relative_error
from src.autodiff.tensor import Tape, Tensor, backward, no_grad
from src.fusion.adaptive_fusion import AdaptiveFusionParams, adaptive_fuse
from src.geometry.camera import CameraIntrinsics
from src.geometry.pose import Pose, RelativePose, relative_pose_target
from src.geometry.quaternion import Quaternion, rotation_matrix_to_quat
from src.losses.pose_losses import euclidean_pose_loss, localization_loss, odometry_loss, relative_motion_loss
from src.losses.pose_terms import PoseBatch, canonical_rotation, relative_rotation, to_relative_batch
from src.losses.segmentation import segmentation_loss
from src.losses.uncertainty import WEIGHT_NAMES, UncertaintyWeights, multitask_loss
from src.networks.model import (
    EncoderConfig,
    JointModel,
    ModelConfig,
    TemporalFeatureCache,
    forward_joint,
    forward_odometry,
)
from src.synthworld.renderer import render_frame
from src.synthworld.scene import generate_scene
from src.synthworld.trajectory import CAMERA_HEIGHT, camera_rotation
from src.utils.log import get_logger
from src.warp.warper import WarpGrid, bilinear_sample, compute_warp_grid

logger = get_logger(__name__)

GROUPS = ("primitives", "warp", "fusion", "losses", "model")
MODEL_INPUT_SIZE = 32
MODEL_CHANNELS = (2, 2, 3, 3, 4)


@dataclass
class CheckCase:
    group: str
    name: str
    fn: Callable[..., Tensor]
    inputs: tuple


@dataclass
class CaseResult:
    group: str
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class SuiteReport:
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[CaseResult]:
        return [r for r in self.results if not r.passed]

    def group_max(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for r in self.results:
            out[r.group] = max(out.get(r.group, 0.0), r.max_rel_err)
        return out


# ---------------------------------
# Helpers
# ---------------------------------
def _t(values) -> Tensor:
    return Tensor(values)


def _away_from_zero(rng: np.random.Generator, shape: tuple, low: float = 0.2) -> np.ndarray:
    """Values with |v| ≥ low, so kinked primitives are evaluated away from their kink."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(low, 1.0, size=shape)


def _projected(fn: Callable[..., Tensor], out_shape: tuple, rng: np.random.Generator) -> Callable[..., Tensor]:
    """Scalar ⟨fn(...), c⟩ for a fixed random c."""
    c = Tensor(rng.normal(size=out_shape))

    def scalar(*xs: Tensor) -> Tensor:
        out = fn(*xs)
        if out.size == 1:
            return ops.reshape(out, ())
        return ops.sum(ops.mul(out, c))

    return scalar


def _case(group: str, name: str, fn: Callable[..., Tensor], inputs: tuple, rng: np.random.Generator) -> CheckCase:
    with no_grad():
        shape = fn(*inputs).shape
    return CheckCase(group, name, _projected(fn, shape, rng), inputs)


def _random_pose(rng: np.random.Generator, cls=Pose) -> Pose:
    q = rng.normal(size=4)
    q[0] = abs(q[0]) + 0.5
    return cls(rng.normal(size=3), Quaternion.from_array(q / np.linalg.norm(q)))


def _weights(**tensors: Tensor) -> UncertaintyWeights:
    return UncertaintyWeights(**{n: tensors.get(n, Tensor(0.0)) for n in WEIGHT_NAMES})


def _raw_quaternions(rng: np.random.Generator, n: int) -> np.ndarray:
    raw = rng.normal(size=(n, 4))
    raw[:, 0] = np.abs(raw[:, 0]) + 0.5
    return raw


# ---------------------------------
# Case groups
# ---------------------------------
def primitive_cases(rng: np.random.Generator) -> list[CheckCase]:
    a, b = _t(rng.normal(size=(2, 3))), _t(rng.normal(size=(2, 3)))
    img = _t(rng.normal(size=(1, 4, 4, 2)))
    w3 = _t(rng.normal(size=(3, 3, 2, 3)))
    w1 = _t(rng.normal(size=(1, 1, 2, 2)))
    wt = _t(rng.normal(size=(2, 2, 2, 3)))
    chan = _t(rng.normal(size=2))
    cases = [
        ("add", ops.add, (a, b)),
        ("sub", ops.sub, (a, b)),
        ("mul", ops.mul, (a, b)),
        ("scalar_mul", lambda x: ops.scalar_mul(x, -1.7), (a,)),
        ("relu", ops.relu, (_t(_away_from_zero(rng, (2, 3))),)),
        ("elu", ops.elu, (_t(_away_from_zero(rng, (2, 3))),)),
        ("exp", ops.exp, (a,)),
        ("log", ops.log, (_t(rng.uniform(0.5, 2.0, size=(2, 3))),)),
        ("matmul", ops.matmul, (_t(rng.normal(size=(2, 3))), _t(rng.normal(size=(3, 4))))),
        ("conv2d_same_s1", lambda x, w: ops.conv2d(x, w, 1, "same"), (img, w3)),
        ("conv2d_same_s2", lambda x, w: ops.conv2d(x, w, 2, "same"), (img, w3)),
        ("conv2d_valid", lambda x, w: ops.conv2d(x, w, 1, "valid"), (img, w3)),
        ("conv2d_1x1", lambda x, w: ops.conv2d(x, w, 1, "same"), (img, w1)),
        ("conv2d_transpose", lambda x, w: ops.conv2d_transpose(x, w, 2), (img, wt)),
        ("avg_pool2d", lambda x: ops.avg_pool2d(x, 2), (img,)),
        ("softmax_channels", ops.softmax_channels, (img,)),
        ("log_softmax_channels", ops.log_softmax_channels, (img,)),
        ("concat_channels", lambda x, y: ops.concat_channels([x, y]), (img, _t(rng.normal(size=(1, 4, 4, 3))))),
        ("slice_channels", lambda x: ops.slice_channels(x, 1, 2), (img,)),
        ("scale_channels", ops.scale_channels, (img, chan)),
        ("add_channel_bias", ops.add_channel_bias, (img, chan)),
        ("l2_norm", lambda x: ops.l2_norm(x), (a,)),
        ("l2_norm_rows", lambda x: ops.l2_norm(x, axis=-1), (a,)),
        ("normalize_last", ops.normalize_last, (a,)),
        ("sum", ops.sum, (a,)),
        ("mean", ops.mean, (a,)),
        ("spatial_mean", ops.spatial_mean, (img,)),
        ("reshape", lambda x: ops.reshape(x, (3, 2)), (a,)),
    ]
    return [_case("primitives", name, fn, inputs, rng) for name, fn, inputs in cases]


def warp_cases(rng: np.random.Generator) -> list[CheckCase]:
    n, h, w, c = 2, 5, 6, 3
    coords = np.stack([rng.uniform(0, w - 1, size=(n, h, w)), rng.uniform(0, h - 1, size=(n, h, w))], axis=-1)
    valid = rng.random((n, h, w)) > 0.2
    grid = WarpGrid(np.where(valid[..., None], coords, -1.0), valid)
    src = _t(rng.normal(size=(n, h, w, c)))

    K = CameraIntrinsics.default_for(8)
    depth = rng.uniform(1.0, 4.0, size=(1, 8, 8))
    motion = RelativePose(np.array([0.05, -0.02, 0.1]), Quaternion.from_axis_angle([0.0, 1.0, 0.0], 0.05))
    rendered = compute_warp_grid(motion, depth, K)
    feats = _t(rng.normal(size=(1, 8, 8, 2)))
    return [
        _case("warp", "bilinear_sample", lambda s: bilinear_sample(s, grid), (src,), rng),
        _case("warp", "bilinear_sample_depth_grid", lambda s: bilinear_sample(s, rendered), (feats,), rng),
    ]


def fusion_cases(rng: np.random.Generator) -> list[CheckCase]:
    c_a, c_b, c_out = 2, 3, 2
    z_a = _t(rng.normal(size=(1, 3, 3, c_a)))
    z_b = _t(rng.normal(size=(1, 3, 3, c_b)))
    w_a, w_b = _t(rng.uniform(0.5, 1.5, c_a)), _t(rng.uniform(0.5, 1.5, c_b))
    W = _t(rng.normal(size=(1, 1, c_a + c_b, c_out)))
    b = _t(rng.uniform(0.2, 0.5, c_out))

    def fuse(za, zb, wa, wb, WW, bb):
        return adaptive_fuse(za, zb, AdaptiveFusionParams(wa, wb, WW, bb))

    return [_case("fusion", "adaptive_fuse", fuse, (z_a, z_b, w_a, w_b, W, b), rng)]


def loss_cases(rng: np.random.Generator) -> list[CheckCase]:
    n = 2
    gt_prev = [_random_pose(rng) for _ in range(n)]
    gt_curr = [_random_pose(rng) for _ in range(n)]
    gt_abs = PoseBatch.from_poses(gt_curr)
    gt_rel = to_relative_batch([relative_pose_target(a, b) for a, b in zip(gt_prev, gt_curr)])
    t_prev, t_curr = _t(rng.normal(size=(n, 3))), _t(rng.normal(size=(n, 3)))
    q_prev, q_curr = _t(_raw_quaternions(rng, n)), _t(_raw_quaternions(rng, n))
    s = [_t(rng.uniform(-1.0, 1.0)) for _ in range(4)]

    def pose(t, q):
        return PoseBatch(t, canonical_rotation(q))

    def eq_global(t, q, s_x, s_q):
        return euclidean_pose_loss(pose(t, q), gt_abs, _weights(s_x=s_x, s_q=s_q))

    def eq_relative(tp, qp, tc, qc, s_x, s_q):
        return relative_motion_loss(pose(tp, qp), pose(tc, qc), gt_rel, _weights(s_x_rel=s_x, s_q_rel=s_q))

    def eq_localization(tp, qp, tc, qc, s_x, s_q):
        u = _weights(s_x=s_x, s_q=s_q, s_x_rel=s_x, s_q_rel=s_q)
        return localization_loss(pose(tp, qp), pose(tc, qc), gt_abs, gt_rel, u)

    def eq_odometry(t, q, s_x, s_q):
        return odometry_loss(pose(t, q), gt_rel, _weights(s_x_vo=s_x, s_q_vo=s_q))

    labels = rng.integers(0, 4, size=(1, 3, 3))
    scores = _t(rng.normal(size=(1, 3, 3, 4)))
    task_losses = tuple(_t(rng.uniform(0.5, 3.0)) for _ in range(3))

    def eq_multitask(l1, l2, l3, s1, s2, s3):
        return multitask_loss(l1, l2, l3, _weights(s_loc=s1, s_vo=s2, s_seg=s3))

    cases = [
        ("canonical_rotation", canonical_rotation, (q_curr,)),
        ("relative_rotation", lambda a, b: relative_rotation(canonical_rotation(a), canonical_rotation(b)),
         (q_prev, q_curr)),
        ("euclidean_pose_loss", eq_global, (t_curr, q_curr, s[0], s[1])),
        ("relative_motion_loss", eq_relative, (t_prev, q_prev, t_curr, q_curr, s[2], s[3])),
        ("localization_loss", eq_localization, (t_prev, q_prev, t_curr, q_curr, s[0], s[1])),
        ("odometry_loss", eq_odometry, (t_curr, q_curr, s[2], s[3])),
        ("segmentation_loss", lambda x: segmentation_loss(x, labels), (scores,)),
        ("multitask_loss", eq_multitask, task_losses + tuple(s[:3])),
    ]
    return [_case("losses", name, fn, inputs, rng) for name, fn, inputs in cases]


def faulty_case(rng: np.random.Generator) -> CheckCase:
    """Square with a deliberately doubled gradient."""

    def wrong_square(x: Tensor) -> Tensor:
        v = x.values
        return Tensor.from_op("wrong_square", v * v, (x,), lambda g: (4.0 * g * v,))

    return _case("primitives", "injected_wrong_backward", wrong_square, (_t(rng.normal(size=(3,))),), rng)


# ---------------------------------
# Downsized joint model
# ---------------------------------
def _model_inputs():
    scene = generate_scene(3)
    K = CameraIntrinsics.default_for(MODEL_INPUT_SIZE)
    cx, cy = scene.center
    poses = [
        Pose(np.array([cx + 0.1 * i, cy + 0.03 * i, CAMERA_HEIGHT]),
             rotation_matrix_to_quat(camera_rotation(0.04 * i, 0.15)))
        for i in range(3)
    ]
    frames = [render_frame(scene, p, K) for p in poses]
    return frames, poses, K


def model_check(rng: np.random.Generator, h: float = DEFAULT_H, tol: float = DEFAULT_TOL) -> CaseResult:
    cfg = ModelConfig(
        encoder=EncoderConfig(MODEL_INPUT_SIZE, MODEL_CHANNELS),
        head_hidden=4,
        num_classes=4,
        dropout=0.0,
        seed=11,
    )
    model = JointModel(cfg).eval()
    model.uncertainty = UncertaintyWeights.initial()
    frames, poses, K = _model_inputs()

    def img(i: int) -> Tensor:
        return Tensor(frames[i].rgb[None])

    with no_grad():
        cache = forward_joint(model, img(0), img(1), frames[1].depth[None], K, TemporalFeatureCache.empty()).cache

    gt_curr = PoseBatch.from_poses([poses[2]])
    gt_rel = to_relative_batch([relative_pose_target(poses[1], poses[2])])
    labels = frames[2].labels[None]
    # scales the pixel-summed segmentation term to the size of the pose terms
    model.uncertainty.s_seg.values = np.array(math.log(labels.size))
    # warp motion is a constant of the audited function
    with no_grad():
        warp_motion = forward_odometry(model, img(1), img(2)).normalized().to_poses(RelativePose)

    def loss() -> Tensor:
        out = forward_joint(model, img(1), img(2), frames[2].depth[None], K, cache, warp_motion=warp_motion)
        u = model.uncertainty
        l_loc = localization_loss(cache.prev_pose, out.pose.normalized(), gt_curr, gt_rel, u)
        l_vo = odometry_loss(out.odometry.normalized(), gt_rel, u)
        return multitask_loss(l_loc, l_vo, segmentation_loss(out.logits, labels), u)

    params = model.parameters()
    with Tape():
        grads = backward(loss(), wrt=list(params.values()))

    worst, worst_name = 0.0, ""
    for name, p in params.items():
        ad = grads[p].values
        idx = np.unravel_index(int(np.abs(ad).argmax()), ad.shape) if ad.ndim else ()
        base = p.values.copy()
        values = []
        for step in (h, -h):
            p.values = base.copy()
            p.values[idx] += step
            with no_grad():
                values.append(loss().item())
        p.values = base
        fd = (values[0] - values[1]) / (2.0 * h)
        err = float(relative_error(np.asarray(ad[idx]), np.asarray(fd)))
        if err > worst:
            worst, worst_name = err, name

    if worst >= tol:
        logger.warning(f"joint model gradient mismatch: worst parameter {worst_name} (rel err {worst:.3g})")
    return CaseResult("model", "joint_model", worst, worst < tol)


# ---------------------------------
# Driver
# ---------------------------------
def run_suite(seed: int = 0, inject_fault: bool = False, include_model: bool = True,
              h: float = DEFAULT_H, tol: float = DEFAULT_TOL) -> SuiteReport:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    cases = primitive_cases(rng) + warp_cases(rng) + fusion_cases(rng) + loss_cases(rng)
    if inject_fault:
        cases.append(faulty_case(rng))

    report = SuiteReport()
    for case in cases:
        res = grad_check(case.fn, *case.inputs, h=h, tol=tol)
        report.results.append(CaseResult(case.group, case.name, res.max_rel_err, res.passed))
        logger.debug(f"{case.group}/{case.name}: max rel err {res.max_rel_err:.3g}")
    if include_model:
        report.results.append(model_check(rng, h=h, tol=tol))

    report.seconds = time.perf_counter() - start
    logger.info(f"Gradient suite: {len(report.results)} cases in {report.seconds:.1f}s, "
                f"{len(report.failures())} failing")
    return report

"""
adaptive_fusion.py
------------------
Adaptive weighted fusion of two activation maps:

    out = max( W ∗ ((w_a ⊙ z_a) ⊕ (w_b ⊙ z_b)) + b , 0 )

⊙ is per-channel scalar multiplication, ⊕ channel concatenation and ∗ a
1×1 convolution ("non-linear feature pooling").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.utils.errors import ShapeError

FUSION_MODES = ("adaptive", "concat", "none")


@dataclass
class AdaptiveFusionParams:
    w_a: Tensor     # (C_a,)
    w_b: Tensor     # (C_b,)
    W: Tensor       # (1, 1, C_a + C_b, C_out)
    b: Tensor       # (C_out,)

    @property
    def channels(self) -> tuple[int, int, int]:
        return self.w_a.shape[0], self.w_b.shape[0], self.W.shape[3]

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {f"{prefix}w_a": self.w_a, f"{prefix}w_b": self.w_b, f"{prefix}W": self.W, f"{prefix}b": self.b}


def xavier_uniform(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_fusion_params(c_a: int, c_b: int, c_out: int, rng_seed: int, name: str = "fusion") -> AdaptiveFusionParams:
    if min(c_a, c_b, c_out) <= 0:
        raise ShapeError(f"fusion channel counts must be positive, got ({c_a}, {c_b}, {c_out})")
    rng = np.random.default_rng(rng_seed)
    c_in = c_a + c_b
    return AdaptiveFusionParams(
        w_a=Tensor(np.ones(c_a), requires_grad=True, name=f"{name}.w_a"),
        w_b=Tensor(np.ones(c_b), requires_grad=True, name=f"{name}.w_b"),
        W=Tensor(xavier_uniform(rng, (1, 1, c_in, c_out), c_in, c_out), requires_grad=True, name=f"{name}.W"),
        b=Tensor(np.zeros(c_out), requires_grad=True, name=f"{name}.b"),
    )


def passthrough_params(c_a: int, c_b: int) -> AdaptiveFusionParams:
    """Parameters under which the layer reduces to ReLU(z_a)."""
    W = np.zeros((1, 1, c_a + c_b, c_a))
    W[0, 0, :c_a, :] = np.eye(c_a)
    return AdaptiveFusionParams(
        w_a=Tensor(np.ones(c_a), requires_grad=True),
        w_b=Tensor(np.zeros(c_b), requires_grad=True),
        W=Tensor(W, requires_grad=True),
        b=Tensor(np.zeros(c_a), requires_grad=True),
    )


def adaptive_fuse(z_a: Tensor, z_b: Tensor, params: AdaptiveFusionParams) -> Tensor:
    """
    z_a : (N, H, W, C_a) or (H, W, C_a);  z_b shares the spatial dims.
    Returns (…, C_out).
    """
    if z_a.shape[:-1] != z_b.shape[:-1]:
        raise ShapeError(f"adaptive_fuse: spatial mismatch {z_a.shape} vs {z_b.shape}")
    c_a, c_b, _ = params.channels
    if z_a.shape[-1] != c_a or z_b.shape[-1] != c_b:
        raise ShapeError(
            f"adaptive_fuse: inputs {z_a.shape} / {z_b.shape} do not match "
            f"fusion weights ({c_a}, {c_b})"
        )

    squeeze = z_a.values.ndim == 3
    if squeeze:
        z_a = ops.reshape(z_a, (1,) + z_a.shape)
        z_b = ops.reshape(z_b, (1,) + z_b.shape)

    weighted = ops.concat_channels([ops.scale_channels(z_a, params.w_a), ops.scale_channels(z_b, params.w_b)])
    pooled = ops.add_channel_bias(ops.conv2d(weighted, params.W, stride=1, padding="same"), params.b)
    out = ops.relu(pooled)

    if squeeze:
        out = ops.reshape(out, out.shape[1:])
    return out


class FusionLayer:
    """
    Named fusion site inside a network.

    ``mode="adaptive"`` learns w_a / w_b; ``"concat"`` keeps them fixed at one
    (plain concatenation + feature pooling). Sites are skipped entirely by the
    network when fusion is disabled.
    """

    def __init__(self, name: str, c_a: int, c_b: int, c_out: int, seed: int, mode: str = "adaptive"):
        if mode not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {mode!r}; expected one of {FUSION_MODES}")
        self.name = name
        self.mode = mode
        self.params = init_fusion_params(c_a, c_b, c_out, seed, name=name)
        if mode == "concat":
            self.params.w_a.requires_grad = False
            self.params.w_b.requires_grad = False

    @property
    def enabled(self) -> bool:
        return self.mode != "none"

    def __call__(self, z_a: Tensor, z_b: Tensor) -> Tensor:
        return adaptive_fuse(z_a, z_b, self.params)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params.named_parameters(prefix=f"{self.name}.")

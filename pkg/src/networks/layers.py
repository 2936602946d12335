"""
layers.py
---------
Toy-scale building blocks: convolutions, ELU residual blocks, fully
connected and transposed-convolution layers, dropout.

A ``Module`` owns named parameter tensors and child modules; names are
dotted paths assigned when the module is registered on its parent.
"""

from __future__ import annotations

import numpy as np

from src.autodiff import ops
from src.autodiff.tensor import Tensor
from src.fusion.adaptive_fusion import xavier_uniform


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def param(self, name: str, values: np.ndarray) -> Tensor:
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        return t

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for name, t in self._params.items():
            full = f"{prefix}{name}"
            t.name = full
            out[full] = t
        for name, mod in self._children.items():
            out.update(mod.named_parameters(prefix=f"{prefix}{name}."))
        return out


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        self.W = self.param("W", xavier_uniform(rng, (k, k, c_in, c_out), k * k * c_in, k * k * c_out))
        self.b = self.param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add_channel_bias(ops.conv2d(x, self.W, stride=self.stride, padding="same"), self.b)


class ResidualBlock(Module):
    """
    Two 3×3 convolutions with ELU and a skip connection; the first
    convolution (and a 1×1 projection on the skip) downsamples by ``stride``.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, stride: int = 2):
        super().__init__()
        self.conv1 = self.child("conv1", Conv2d(c_in, c_out, 3, stride, rng))
        self.conv2 = self.child("conv2", Conv2d(c_out, c_out, 3, 1, rng))
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = self.child("proj", Conv2d(c_in, c_out, 1, stride, rng))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(ops.elu(self.conv1(x)))
        skip = self.proj(x) if self.proj is not None else x
        return ops.elu(ops.add(h, skip))


class Linear(Module):
    def __init__(self, f_in: int, f_out: int, rng: np.random.Generator):
        super().__init__()
        self.W = self.param("W", xavier_uniform(rng, (f_in, f_out), f_in, f_out))
        self.b = self.param("b", np.zeros(f_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add_channel_bias(ops.matmul(x, self.W), self.b)


class Deconv(Module):
    """Transposed convolution with kernel == stride (exact ×stride upsampling)."""

    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator):
        super().__init__()
        self.stride = stride
        fan = stride * stride
        self.W = self.param("W", xavier_uniform(rng, (stride, stride, c_in, c_out), c_in * fan, c_out * fan))
        self.b = self.param("b", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add_channel_bias(ops.conv2d_transpose(x, self.W, self.stride), self.b)


class Dropout:
    """Inverted dropout; identity when ``training`` is False or p == 0."""

    def __init__(self, p: float, rng: np.random.Generator):
        self.p = float(p)
        self.rng = rng

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if not training or self.p <= 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return ops.mul(x, Tensor(keep))


class Stages(Module):
    """A chain of downsampling residual blocks named ``stage<k>``."""

    def __init__(self, channels: list[tuple[int, int, int]], rng: np.random.Generator):
        super().__init__()
        self.order = []
        for k, c_in, c_out in channels:
            name = f"stage{k}"
            self.child(name, ResidualBlock(c_in, c_out, rng))
            self.order.append((k, name))

    def __call__(self, x: Tensor) -> dict[int, Tensor]:
        feats = {}
        for k, name in self.order:
            x = self._children[name](x)
            feats[k] = x
        return feats

    @property
    def last(self) -> int:
        return self.order[-1][0]

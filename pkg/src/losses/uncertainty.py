"""
uncertainty.py
--------------
Learnable homoscedastic weighting. Every weighted term has the form

    L · exp(−ŝ) + ŝ

whose minimizer over ŝ for a fixed L is ŝ* = ln L.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from src.autodiff import ops
from src.autodiff.tensor import Tensor

WEIGHT_NAMES = ("s_x", "s_q", "s_x_rel", "s_q_rel", "s_x_vo", "s_q_vo", "s_loc", "s_vo", "s_seg")


def _scalar(value: float, name: str) -> Tensor:
    return Tensor(float(value), requires_grad=True, name=f"uncertainty.{name}")


@dataclass
class UncertaintyWeights:
    s_x: Tensor
    s_q: Tensor
    s_x_rel: Tensor
    s_q_rel: Tensor
    s_x_vo: Tensor
    s_q_vo: Tensor
    s_loc: Tensor
    s_vo: Tensor
    s_seg: Tensor

    @classmethod
    def initial(cls, translation: float = 0.0, rotation: float = -3.0, task: float = 0.0) -> "UncertaintyWeights":
        """Rotation residuals are numerically smaller, hence the negative rotation ŝ."""
        values = {
            "s_x": translation, "s_q": rotation,
            "s_x_rel": translation, "s_q_rel": rotation,
            "s_x_vo": translation, "s_q_vo": rotation,
            "s_loc": task, "s_vo": task, "s_seg": task,
        }
        return cls(**{name: _scalar(v, name) for name, v in values.items()})

    @classmethod
    def constant(cls, **values: float) -> "UncertaintyWeights":
        """All-zero weights except the given ones; convenient for hand checks."""
        return cls(**{name: _scalar(values.get(name, 0.0), name) for name in WEIGHT_NAMES})

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"uncertainty.{f.name}": getattr(self, f.name) for f in fields(self)}

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name).item() for f in fields(self)}


def weighted_term(loss: Tensor, s: Tensor) -> Tensor:
    return ops.add(ops.mul(loss, ops.exp(ops.scalar_mul(s, -1.0))), s)


def multitask_loss(l_loc: Tensor, l_vo: Tensor, l_seg: Tensor, u: UncertaintyWeights) -> Tensor:
    return ops.add(
        ops.add(weighted_term(l_loc, u.s_loc), weighted_term(l_vo, u.s_vo)),
        weighted_term(l_seg, u.s_seg),
    )

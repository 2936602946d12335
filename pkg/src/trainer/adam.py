"""
adam.py
-------
Adam with bias correction over named parameter tensors, plus global-norm
gradient clipping.

Only parameters present in the gradient map are updated; bias correction
uses each parameter's own update count so a parameter first reached late
(e.g. the temporal fusion weights, which need a filled cache) starts with
a properly corrected step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from src.autodiff.tensor import Tensor
from src.utils.errors import TrainingHaltedError


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-10
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg, lr: float) -> "AdamState":
        return cls(lr=lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)


def check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingHaltedError(name)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """In-place update of ``params`` from ``grads``; returns ``state``."""
    check_finite(grads)
    state.step += 1

    for name, g in grads.items():
        p = params[name]
        if g.shape != p.values.shape:
            raise TrainingHaltedError(name, f"gradient shape {g.shape} != parameter shape {p.values.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        t = state.counts.get(name, 0) + 1
        state.counts[name] = t

        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v

        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)

    return state

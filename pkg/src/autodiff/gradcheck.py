"""
gradcheck.py
------------
Central finite differences as the oracle for every backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.autodiff.tensor import Tape, Tensor, backward, no_grad

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4
_DENOM_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_input: int = 0
    worst_index: tuple = ()


def finite_difference_grad(
    f: Callable[..., Tensor],
    x: Tensor,
    h: float = DEFAULT_H,
    others: tuple = (),
    position: int = 0,
) -> Tensor:
    """
    (f(x + h·e_i) − f(x − h·e_i)) / 2h for every element i of ``x``.

    ``others`` are the remaining positional arguments of ``f``; ``x`` is
    inserted at ``position``.
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")

    base = x.values
    grad = np.zeros_like(base)
    flat = grad.reshape(-1)

    def _eval(values: np.ndarray) -> float:
        args = list(others)
        args.insert(position, Tensor(values))
        with no_grad():
            return f(*args).item()

    for i in range(base.size):
        plus = base.copy()
        minus = base.copy()
        plus.reshape(-1)[i] += h
        minus.reshape(-1)[i] -= h
        flat[i] = (_eval(plus) - _eval(minus)) / (2.0 * h)

    return Tensor(grad)


def analytic_grad(f: Callable[..., Tensor], *xs: Tensor) -> list[np.ndarray]:
    leaves = [Tensor(x.values, requires_grad=True) for x in xs]
    with Tape():
        loss = f(*leaves)
        grads = backward(loss, wrt=leaves)
    return [grads[leaf].values for leaf in leaves]


def relative_error(ad: np.ndarray, fd: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), _DENOM_FLOOR)
    return np.abs(ad - fd) / denom


def grad_check(
    f: Callable[..., Tensor],
    *xs: Tensor,
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
) -> GradCheckReport:
    """
    Compare ``backward`` against central differences for every input of ``f``.

    pass ⇔ max_i |ad − fd| / max(|ad|, |fd|, 1e-8) < tol.
    """
    ad = analytic_grad(f, *xs)

    worst, worst_input, worst_index = 0.0, 0, ()
    for k, x in enumerate(xs):
        others = tuple(xs[:k]) + tuple(xs[k + 1:])
        fd = finite_difference_grad(f, x, h=h, others=others, position=k).values
        err = relative_error(ad[k], fd)
        if err.size and float(err.max()) > worst:
            worst = float(err.max())
            worst_input = k
            worst_index = tuple(int(i) for i in np.unravel_index(int(err.argmax()), err.shape))

    return GradCheckReport(max_rel_err=worst, passed=worst < tol, worst_input=worst_input, worst_index=worst_index)

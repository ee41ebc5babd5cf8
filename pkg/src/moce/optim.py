"""Gradient-ascent steppers (Adam, RMSprop) and a finite-difference gradient oracle."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class OptimizerKind(str, enum.Enum):
    ADAM = "adam"
    RMSPROP = "rmsprop"


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class OptimizerState:
    kind: OptimizerKind
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def create(cls, kind, params, learning_rate: float) -> "OptimizerState":
        if not learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        kind = OptimizerKind(kind)
        zeros = [np.zeros_like(p, dtype=float) for p in params]
        second = [np.zeros_like(p, dtype=float) for p in params]
        first = zeros if kind is OptimizerKind.ADAM else []
        return cls(kind, learning_rate, first_moment=first, second_moment=second)


def step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], names=None):
    """One ascent step (parameters move along ``+grad``).

    Returns new parameter arrays and a new state; inputs are not modified.
    """
    names = names or [f"block {k}" for k in range(len(params))]
    if len(params) != len(grads) or len(params) != len(state.second_moment):
        raise ValueError("parameter, gradient and state block counts differ")
    bad = [n for n, g in zip(names, grads) if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient entries in {', '.join(bad)}")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter shape {np.shape(p)}")

    t = state.step_count + 1
    lr = state.learning_rate
    new_params, first, second = [], [], []
    if state.kind is OptimizerKind.ADAM:
        b1, b2 = state.beta1, state.beta2
        for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            new_params.append(p + lr * mhat / (np.sqrt(vhat) + state.eps))
            first.append(m)
            second.append(v)
    else:
        rho = state.decay
        for p, g, v in zip(params, grads, state.second_moment):
            v = rho * v + (1 - rho) * g * g
            new_params.append(p + lr * g / (np.sqrt(v) + state.eps))
            second.append(v)
    new_state = OptimizerState(
        state.kind, lr, state.beta1, state.beta2, state.decay, state.eps, t, first, second
    )
    return new_params, new_state


def finite_diff_grad(f: Callable[[list], float], params: Sequence[np.ndarray], step: float = 1e-5):
    """Central-difference gradient of scalar ``f`` with respect to each array entry."""
    params = [np.array(p, dtype=float) for p in params]
    grads = []
    for b, p in enumerate(params):
        g = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            fp = f(params)
            p[idx] = orig - step
            fm = f(params)
            p[idx] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite objective probing block {b} coordinate {idx}")
            g[idx] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric) -> float:
    """Largest absolute discrepancy scaled by the largest gradient magnitude."""
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)

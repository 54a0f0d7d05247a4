"""Adam with the inverse-square-root warmup schedule used for Transformers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

__all__ = ["AdamState", "noam_rate", "adam_step", "Adam"]


def noam_rate(step: int, d_model: int, warmup: int, scale: float = 1.0) -> float:
    """``scale * d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)`` for step >= 1."""
    if step < 1:
        raise ValueError("learning-rate schedule is defined from step 1")
    return scale * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    lr_scale: float = 1.0
    warmup_steps: int = 400
    d_model: int = 64
    constant_lr: Optional[float] = None  # bypasses the warmup schedule when set

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(0, np.zeros_like(param, dtype=np.float64),
                   np.zeros_like(param, dtype=np.float64), **hyper)

    def rate(self, step: int) -> float:
        if self.constant_lr is not None:
            return self.constant_lr
        return noam_rate(step, self.d_model, self.warmup_steps, self.lr_scale)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays, inputs are untouched."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ValueError(f"shape mismatch: param {param.shape}, grad {grad.shape}, "
                         f"state {state.first_moment.shape}")
    t = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = param - state.rate(t) * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, step=t, first_moment=m, second_moment=v)


@dataclass
class Adam:
    """Adam over a dict of named parameters, updated in place by the training driver."""

    params: dict
    d_model: int
    warmup_steps: int = 400
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    constant_lr: Optional[float] = None
    states: dict = field(init=False)

    def __post_init__(self):
        hyper = dict(beta1=self.beta1, beta2=self.beta2, eps=self.eps, lr_scale=self.lr_scale,
                     warmup_steps=self.warmup_steps, d_model=self.d_model,
                     constant_lr=self.constant_lr)
        self.states = {k: AdamState.zeros_like(v, **hyper) for k, v in self.params.items()}

    def step(self, grads: dict) -> None:
        for name in self.params:
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(self.params[name])
            self.params[name], self.states[name] = adam_step(self.params[name], g, self.states[name])

"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

__all__ = ["GradCheckReport", "gradient_check", "autograd_gradients"]


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst: tuple  # (parameter name, flat index)
    tolerance: float
    per_param: dict = field(default_factory=dict)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        name, idx = self.worst
        return (f"gradient check {status}: max relative error {self.max_rel_error:.3e} "
                f"(tolerance {self.tolerance:g}) at {name}[{idx}]")


def gradient_check(f: Callable[[dict], float], theta: Mapping[str, np.ndarray],
                   grads: Mapping[str, np.ndarray], tolerance: float = 1e-4,
                   h: float = 1e-5, floor: float = 1e-6) -> GradCheckReport:
    """Compare ``grads`` against ``(f(θ+h) - f(θ-h)) / 2h`` coordinate by coordinate.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    near-zero gradients from turning rounding noise into large ratios.
    """
    theta = {k: np.array(v, dtype=np.float64, copy=True) for k, v in theta.items()}
    worst_err, worst = 0.0, ("", -1)
    per_param = {}
    base = f(theta)
    if not math.isfinite(base):
        raise ValueError("objective is not finite at the check point")
    for name, value in theta.items():
        analytic = np.asarray(grads[name], dtype=np.float64).reshape(-1)
        flat = value.reshape(-1)
        param_worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(theta)
            flat[i] = orig - h
            fm = f(theta)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise ValueError(f"objective not finite when perturbing {name}[{i}]")
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            param_worst = max(param_worst, err)
            if err > worst_err or worst[1] < 0:
                worst_err, worst = err, (name, i)
        per_param[name] = param_worst
    return GradCheckReport(worst_err < tolerance, worst_err, worst, tolerance, per_param)


def autograd_gradients(loss_fn: Callable[[dict], "object"], theta: Mapping[str, np.ndarray]):
    """Evaluate a Tensor-valued ``loss_fn`` and return (value, gradients by name)."""
    from .autograd import Tensor

    leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in theta.items()}
    loss = loss_fn(leaves)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    return loss.item(), grads

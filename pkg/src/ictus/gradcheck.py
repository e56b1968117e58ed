"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, backward

__all__ = ["GradCheckReport", "grad_check"]


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)

    def __str__(self):
        lines = [f"grad check: max rel error {self.max_rel_error:.3e} ({self.worst_param})"]
        for name, err in sorted(self.per_param.items()):
            lines.append(f"  {name}: {err:.3e}")
        return "\n".join(lines)


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def grad_check(loss_fn, params: dict[str, Var], h: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the scalar loss from the current parameter
    values on every call (parameters are perturbed in place). Deterministic:
    any randomness must be frozen inside ``loss_fn``.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}

    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            orig = flat[i]
            step = h * max(1.0, abs(orig))
            x_plus = orig + step
            x_minus = orig - step
            flat[i] = x_plus
            f_plus = loss_fn().item()
            flat[i] = x_minus
            f_minus = loss_fn().item()
            flat[i] = orig
            # the realized step, not the requested one: exact in float64
            numeric = (f_plus - f_minus) / (x_plus - x_minus)
            err = _rel_err(float(analytic[name].reshape(-1)[i]), numeric)
            if err > worst_here:
                worst_here = err
        per_param[name] = worst_here
        if worst_here > worst[1]:
            worst = (name, worst_here)
    return GradCheckReport(max_rel_error=worst[1], worst_param=worst[0], per_param=per_param)

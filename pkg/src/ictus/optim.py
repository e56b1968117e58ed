"""Adam optimizer with bias correction over tape leaves."""

from __future__ import annotations

import numpy as np

from .autodiff import Var

__all__ = ["Adam", "DivergenceError"]


class DivergenceError(RuntimeError):
    """Training produced non-finite gradients or parameters."""


class Adam:
    """Standard bias-corrected Adam.

    update = -lr * m_hat / (sqrt(v_hat) + eps), where m_hat and v_hat are
    the bias-corrected first/second moment estimates. Parameters with a
    ``None`` gradient are left untouched.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params: list[Var] = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise DivergenceError(
                    f"non-finite gradient for parameter '{p.name or i}' at step {self.t}"
                )
            self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self._m[i] / c1
            v_hat = self._v[i] / c2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

"""Adam with bias correction."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .layers import Parameter


def adam_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None], lr: float,
              beta1: float, beta2: float, eps: float, t: int) -> None:
    """Apply one in-place Adam update; ``t`` is the 1-based step count."""
    if t < 1:
        raise ValueError("adam step count starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g in zip(params, grads):
        if g is None:
            continue
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / c1
        v_hat = p.v / c2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        adam_step(self.params, [p.grad for p in self.params], self.lr, self.beta1, self.beta2,
                  self.eps, self.t)

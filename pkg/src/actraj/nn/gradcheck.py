"""Finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def analytic_grads(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, floor: float = 1e-5) -> float:
    """Largest relative error between tape gradients and central differences.

    The error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``. With
    ``max_coords`` set, at most that many coordinates per tensor are sampled.
    ``floor`` keeps gradients that are exactly zero (e.g. attention key biases)
    from turning rounding noise in the difference quotient into a large ratio.
    """
    rng = np.random.default_rng(seed)
    grads = analytic_grads(f, params)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("grad_check needs contiguous tensors")
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        gflat = g.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = f().item()
            flat[i] = orig - h
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst

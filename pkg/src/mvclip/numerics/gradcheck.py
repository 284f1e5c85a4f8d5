"""Finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Parameter, Tensor


class NondeterministicLoss(RuntimeError):
    pass


def _eval(loss_fn: Callable[[], Tensor]) -> float:
    out = loss_fn()
    return float(out.data if isinstance(out, Tensor) else out)


def analytic_grads(loss_fn: Callable[[], Tensor], params: list[Parameter]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-5,
    grads: list[np.ndarray] | None = None,
) -> float:
    """Max relative error between central differences and backprop.

    ``params`` should hold float64 data; frozen parameters are skipped.
    ``grads`` overrides the reverse-mode gradients (used to test the
    checker itself against a deliberately wrong gradient).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-6, 1e-4]")
    params = [p for p in params if p.trainable]
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters ({p.name} is {p.dtype})")

    base = _eval(loss_fn)
    if _eval(loss_fn) != base:
        raise NondeterministicLoss("two forward passes of the loss disagree")

    if grads is None:
        grads = analytic_grads(loss_fn, params)

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _eval(loss_fn)
            flat[i] = orig - eps
            down = _eval(loss_fn)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(gflat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst

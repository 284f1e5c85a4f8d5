"""InfoNCE and the four-term shape/image/text objective."""
from __future__ import annotations

import math

import numpy as np

from .numerics import Parameter, Tensor, ops

INIT_TEMPERATURE = 0.07
MIN_TEMPERATURE = 0.01


class LogitScale:
    """Learnable inverse temperature stored as log(1/tau), with tau >= 0.01."""

    def __init__(self, temperature: float = INIT_TEMPERATURE, trainable: bool = True, dtype=np.float32):
        self.param = Parameter(np.asarray(math.log(1.0 / temperature), dtype=dtype),
                               name="logit_scale", trainable=trainable)

    @property
    def temperature(self) -> float:
        return math.exp(-float(self.param.data))

    def scale(self) -> Tensor:
        return ops.exp(self.param)

    def clamp(self) -> None:
        cap = math.log(1.0 / MIN_TEMPERATURE)
        if float(self.param.data) > cap:
            self.param.data = np.asarray(cap, dtype=self.param.dtype)


def _scale_tensor(tau, like: Tensor) -> Tensor:
    if isinstance(tau, LogitScale):
        return tau.scale()
    if isinstance(tau, Tensor):
        return ops.div(1.0, tau)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    return Tensor(np.asarray(1.0 / tau, dtype=like.dtype))


def info_nce(a, b, tau) -> Tensor:
    """Mean over i of -log softmax_k(<a_i, b_k> / tau) at k = i.

    ``tau`` is a float temperature, a temperature Tensor, or a LogitScale.
    """
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    if a.shape[0] == 0:
        raise ValueError("info_nce needs a non-empty batch")
    if a.shape != b.shape:
        raise ValueError(f"batch mismatch: {a.shape} vs {b.shape}")
    n = a.shape[0]
    logits = ops.matmul(a, ops.swap_last(b)) * _scale_tensor(tau, a)
    logp = ops.log_softmax(logits, axis=-1)
    idx = np.arange(n)
    return ops.mean(logp[idx, idx]) * -1.0


def full_loss(fs, fi, ft, tau) -> Tensor:
    """(S->T + T->S + S->I + I->S) / 4, each term already averaged over the batch."""
    shapes = {x.shape[0] if isinstance(x, Tensor) else np.shape(x)[0] for x in (fs, fi, ft)}
    if len(shapes) != 1:
        raise ValueError("fS, fI and fT must share the batch size")
    terms = [info_nce(fs, ft, tau), info_nce(ft, fs, tau), info_nce(fs, fi, tau), info_nce(fi, fs, tau)]
    return (terms[0] + terms[1] + terms[2] + terms[3]) * 0.25


def clip_loss(fi, ft, tau) -> Tensor:
    """Symmetric image/text InfoNCE used while pretraining the toy CLIP."""
    return (info_nce(fi, ft, tau) + info_nce(ft, fi, tau)) * 0.5

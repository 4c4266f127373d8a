"""Adadelta (Zeiler, 2012): per-parameter step sizes from decayed RMS ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np

from ..errors import ShapeError, TrainingDivergedError
from .layers import Param


def adadelta_step(param, grad, eg2, edx2, rho=0.95, eps=1e-6):
    """One Adadelta update on raw arrays.

    Returns ``(new_param, new_eg2, new_edx2, delta)``; inputs are not modified.
    """
    param, grad, eg2, edx2 = (np.asarray(a) for a in (param, grad, eg2, edx2))
    if not (param.shape == grad.shape == eg2.shape == edx2.shape):
        raise ShapeError("parameter, gradient and accumulator shapes differ")
    eg2 = rho * eg2 + (1 - rho) * grad * grad
    delta = -(np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps)) * grad
    edx2 = rho * edx2 + (1 - rho) * delta * delta
    return param + delta, eg2, edx2, delta


@dataclass
class OptimizerState:
    rho: float = 0.95
    epsilon: float = 1e-6
    eg2: Dict[str, np.ndarray] = field(default_factory=dict)
    edx2: Dict[str, np.ndarray] = field(default_factory=dict)


class Adadelta:
    """Adadelta over a list of parameters.

    ``learning_rate`` scales the applied step only; the running average of
    squared updates tracks the unscaled step, as in the common library
    implementations. ``clip_norm`` rescales the global gradient norm before
    the update. The defaults (1.0, no clipping) give the plain rule.
    """

    def __init__(self, params: Iterable[Param], rho=0.95, eps=1e-6, learning_rate=1.0, clip_norm=None):
        if learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {learning_rate}")
        if clip_norm is not None and clip_norm <= 0:
            raise ValueError(f"clip_norm must be > 0, got {clip_norm}")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.state = OptimizerState(rho=rho, epsilon=eps)
        for p in self.params:
            self.state.eg2[p.name] = np.zeros_like(p.value)
            self.state.edx2[p.name] = np.zeros_like(p.value)

    def step(self):
        st = self.state
        # check everything first so a bad block leaves all parameters untouched
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise TrainingDivergedError(f"non-finite gradient in parameter block {p.name!r}")
        scale = 1.0
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in self.params))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for p in self.params:
            cast = p.value.dtype.type
            rho, eps = cast(st.rho), cast(st.epsilon)
            g = p.grad if scale == 1.0 else p.grad * cast(scale)
            eg2 = st.eg2[p.name]
            edx2 = st.edx2[p.name]
            eg2 *= rho
            eg2 += (1 - rho) * g * g
            delta = -(np.sqrt(edx2 + eps) / np.sqrt(eg2 + eps)) * g
            edx2 *= rho
            edx2 += (1 - rho) * delta * delta
            if self.learning_rate != 1.0:
                delta *= cast(self.learning_rate)
            p.value += delta

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

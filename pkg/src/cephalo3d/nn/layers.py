"""Layer objects that record their forward pass and replay it backwards."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from ..errors import ShapeError, StateError
from . import functional as F

STAGE_KERNELS: Tuple[Tuple[int, int, int], ...] = ((1, 3, 3), (3, 1, 3), (3, 3, 1))


class Param:
    """A named parameter block with paired gradient storage."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"


def glorot_uniform(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    params: List[Param] = []
    _cache = None

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        cache, self._cache = self._cache, None
        return cache

    def parameters(self) -> List[Param]:
        return list(self.params)


class Conv3d(Layer):
    def __init__(self, name, in_ch, out_ch, ksize, rng, dtype=np.float32):
        taps = int(np.prod(ksize))
        w = glorot_uniform(rng, (out_ch, in_ch) + tuple(ksize), in_ch * taps, out_ch * taps, dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(out_ch, dtype=dtype))
        self.params = [self.weight, self.bias]

    def forward(self, x, training=False):
        out, self._cache = F.conv3d_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = F.conv3d_backward(dout, self._take_cache())
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class Maxout(Layer):
    def __init__(self, k=2):
        self.k = k
        self.params = []

    def forward(self, x, training=False):
        out, self._cache = F.maxout_forward(x, self.k)
        return out

    def backward(self, dout):
        return F.maxout_backward(dout, self._take_cache())


class MaxPool3d(Layer):
    params: List[Param] = []

    def forward(self, x, training=False):
        out, self._cache = F.maxpool_forward(x)
        return out

    def backward(self, dout):
        return F.maxpool_backward(dout, self._take_cache())


class ConvBlock(Layer):
    """Three staged anisotropic convolutions, maxout, then 2x2x2 max-pool.

    The stages use kernels (1,3,3), (3,1,3), (3,3,1) and all produce
    ``k * out_channels`` maps; maxout reduces them to ``out_channels``.
    """

    def __init__(self, name, in_channels, out_channels, rng, maxout_k=2,
                 kernels: Sequence[Tuple[int, int, int]] = STAGE_KERNELS, dtype=np.float32):
        pre = maxout_k * out_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.convs = []
        ch = in_channels
        for s, ks in enumerate(kernels):
            self.convs.append(Conv3d(f"{name}.stage{s}", ch, pre, ks, rng, dtype))
            ch = pre
        self.maxout = Maxout(maxout_k)
        self.pool = MaxPool3d()
        self.params = [p for c in self.convs for p in c.params]

    def forward(self, x, training=False):
        if x.shape[0] != self.in_channels:
            raise ShapeError(f"block expects {self.in_channels} channels, got {x.shape[0]}")
        for conv in self.convs:
            x = conv.forward(x)
        return self.pool.forward(self.maxout.forward(x))

    def backward(self, dout):
        d = self.maxout.backward(self.pool.backward(dout))
        for conv in reversed(self.convs):
            d = conv.backward(d)
        return d


class Dropout(Layer):
    def __init__(self, rate=0.5):
        self.rate = rate
        self.params = []
        self.rng = None

    def forward(self, x, training=False):
        out, mask = F.dropout_forward(x, self.rate, training, self.rng)
        self._cache = (mask,)
        return out

    def backward(self, dout):
        (mask,) = self._take_cache()
        return F.dropout_backward(dout, mask)


class Dense(Layer):
    def __init__(self, name, in_features, out_features, rng, dtype=np.float32):
        w = glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype)
        self.weight = Param(f"{name}.weight", w)
        self.bias = Param(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self.params = [self.weight, self.bias]

    def forward(self, x, training=False):
        out, self._cache = F.dense_forward(x, self.weight.value, self.bias.value)
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._take_cache())
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class DenseMaxout(Layer):
    """Dense layer producing ``k * units`` pre-activations followed by maxout."""

    def __init__(self, name, in_features, units, rng, k=2, dtype=np.float32):
        self.dense = Dense(name, in_features, k * units, rng, dtype)
        self.k = k
        self.params = self.dense.params

    def forward(self, x, training=False):
        pre = self.dense.forward(x)
        out, self._cache = F.maxout_forward(pre.reshape(-1, 1, 1, 1), self.k)
        return out.reshape(-1)

    def backward(self, dout):
        d = F.maxout_backward(dout.reshape(-1, 1, 1, 1), self._take_cache())
        return self.dense.backward(d.reshape(-1))


class SoftmaxHeads:
    """Splits a logit vector into consecutive segments and softmaxes each one."""

    def __init__(self, lengths: Sequence[int]):
        self.lengths = tuple(int(n) for n in lengths)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])

    @property
    def total(self) -> int:
        return int(self.offsets[-1])

    def split(self, v):
        return [v[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def probabilities(self, logits):
        if logits.shape != (self.total,):
            raise ShapeError(f"expected {self.total} logits, got {logits.shape}")
        return [F.softmax(seg.astype(np.float64)) for seg in self.split(logits)]

    def loss(self, logits, targets):
        """Summed soft-target cross-entropy; returns ``(loss, dlogits, probs)``."""
        if logits.shape != (self.total,):
            raise ShapeError(f"expected {self.total} logits, got {logits.shape}")
        if len(targets) != len(self.lengths):
            raise ShapeError(f"expected {len(self.lengths)} targets, got {len(targets)}")
        total = 0.0
        grads, probs = [], []
        for seg, t in zip(self.split(logits), targets):
            l, g, p = F.softmax_cross_entropy(seg, t)
            total += l
            grads.append(g)
            probs.append(p)
        return total, np.concatenate(grads).astype(logits.dtype), probs

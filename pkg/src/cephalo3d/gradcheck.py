"""Central finite-difference checks for every layer type, in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .nn import functional as F
from .nn.layers import STAGE_KERNELS, Conv3d, Dense, DenseMaxout, Dropout, Maxout, MaxPool3d, SoftmaxHeads

STEP = 1e-4
TOLERANCE = 1e-4
GRAD_FLOOR = 1e-6


def relative_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), GRAD_FLOOR)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every element of ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def _spread(rng, shape, gap=0.05):
    """Values with pairwise gaps >= ``gap`` so max-type layers have no near-ties."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2) * gap
    return vals.reshape(shape).astype(np.float64)


def _check_module(layer, x, rng, params=()):
    """Project the layer output on a random direction and compare all gradients."""
    out = layer.forward(x, training=False)
    r = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, training=False) * r))

    for p in params:
        p.zero_grad()
    layer.forward(x, training=False)
    dx = layer.backward(r)
    errs = [relative_error(dx, numeric_grad(loss, x))]
    for p in params:
        errs.append(relative_error(p.grad, numeric_grad(loss, p.value)))
    return max(errs)


def _small_dims(rng, lo=2, hi=6):
    return tuple(int(d) for d in rng.integers(lo, hi + 1, size=3))


def check_conv_stage(rng) -> float:
    cin, cout = (int(v) for v in rng.integers(1, 4, size=2))
    ks = STAGE_KERNELS[int(rng.integers(0, 3))]
    layer = Conv3d("c", cin, cout, ks, rng, dtype=np.float64)
    layer.bias.value[...] = rng.standard_normal(cout)
    x = rng.standard_normal((cin,) + _small_dims(rng))
    return _check_module(layer, x, rng, layer.params)


class _Staged:
    """The three staged convolutions of a block, without maxout/pool."""

    def __init__(self, cin, cout, rng):
        self.convs = []
        ch = cin
        for s, ks in enumerate(STAGE_KERNELS):
            self.convs.append(Conv3d(f"s{s}", ch, cout, ks, rng, dtype=np.float64))
            ch = cout
        self.params = [p for c in self.convs for p in c.params]

    def forward(self, x, training=False):
        for c in self.convs:
            x = c.forward(x)
        return x

    def backward(self, d):
        for c in reversed(self.convs):
            d = c.backward(d)
        return d


def check_staged_conv(rng) -> float:
    cin, cout = (int(v) for v in rng.integers(1, 3, size=2))
    layer = _Staged(cin, cout, rng)
    for p in layer.params:
        if p.name.endswith("bias"):
            p.value[...] = rng.standard_normal(p.shape)
    x = rng.standard_normal((cin,) + _small_dims(rng, 2, 5))
    return _check_module(layer, x, rng, layer.params)


def check_maxout(rng) -> float:
    k = int(rng.integers(2, 4))
    c = int(rng.integers(1, 4))
    x = _spread(rng, (k * c,) + _small_dims(rng, 1, 4))
    return _check_module(Maxout(k), x, rng)


def check_maxpool(rng) -> float:
    c = int(rng.integers(1, 3))
    x = _spread(rng, (c,) + _small_dims(rng, 2, 5))
    return _check_module(MaxPool3d(), x, rng)


def check_dense(rng) -> float:
    n_in, n_out = (int(v) for v in rng.integers(1, 12, size=2))
    layer = Dense("d", n_in, n_out, rng, dtype=np.float64)
    layer.bias.value[...] = rng.standard_normal(n_out)
    return _check_module(layer, rng.standard_normal(n_in), rng, layer.params)


def check_dense_maxout(rng) -> float:
    n_in, units = (int(v) for v in rng.integers(1, 8, size=2))
    layer = DenseMaxout("h", n_in, units, rng, k=2, dtype=np.float64)
    # distinct well-separated biases keep maxout pairs away from ties
    layer.dense.bias.value[...] = _spread(rng, (2 * units,), gap=1.0)
    return _check_module(layer, rng.standard_normal(n_in) * 0.1, rng, layer.params)


def check_softmax_ce(rng) -> float:
    lengths = [int(v) for v in rng.integers(2, 9, size=int(rng.integers(1, 4)))]
    heads = SoftmaxHeads(lengths)
    logits = rng.standard_normal(heads.total) * 2
    targets = []
    for n in lengths:
        t = rng.random(n)
        targets.append(t / t.sum())
    _, g, _ = heads.loss(logits, targets)
    num = numeric_grad(lambda: heads.loss(logits, targets)[0], logits)
    return relative_error(g, num)


def check_dropout(rng) -> float:
    """Inference path (identity) and training path with a frozen mask."""
    x = rng.standard_normal((2,) + _small_dims(rng, 1, 4))
    rate = float(rng.uniform(0.1, 0.7))
    off = _check_module(Dropout(rate), x, rng)
    seed = int(rng.integers(0, 2**31))
    layer = Dropout(rate)
    r = rng.standard_normal(x.shape)

    def loss():
        layer.rng = np.random.default_rng(seed)
        return float(np.sum(layer.forward(x, training=True) * r))

    loss()
    dx = layer.backward(r)
    on = relative_error(dx, numeric_grad(loss, x))
    return max(off, on)


CHECKS: Dict[str, Callable[[np.random.Generator], float]] = {
    "conv_stage": check_conv_stage,
    "staged_conv": check_staged_conv,
    "maxout": check_maxout,
    "maxpool": check_maxpool,
    "dense": check_dense,
    "dense_maxout": check_dense_maxout,
    "softmax_cross_entropy": check_softmax_ce,
    "dropout": check_dropout,
}


@dataclass
class CheckResult:
    layer: str
    trials: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def run_all(trials: int = 20, seed: int = 0) -> List[CheckResult]:
    out = []
    for i, (name, fn) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        worst = max(fn(rng) for _ in range(trials))
        out.append(CheckResult(name, trials, worst))
    return out

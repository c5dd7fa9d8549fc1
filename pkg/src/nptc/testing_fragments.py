"""Standard model fragments for finite-difference gradient checking.

Shared by the gradcheck CLI subcommand and the test suite. Tap tables and
hierarchies here are synthetic (random but valid); gradient correctness
does not depend on where taps point.
"""

from __future__ import annotations

import numpy as np

from .hierarchy import PointHierarchy
from .network import (ConvLayer, GlobalMaxPool, Linear, MLP, Module, ReLU,
                      ResidualBlock)
from .operator import NPTCOperator


def random_operator(n_in: int, n_out: int, k: int, rng,
                    self_map: bool = False) -> NPTCOperator:
    """A valid random tap table; self_map makes it point-set -> itself."""
    if self_map:
        out = np.arange(n_out, dtype=np.int64)
    else:
        out = rng.choice(n_in, size=n_out, replace=False).astype(np.int64)
    taps = rng.integers(0, n_in, size=(n_out, k * k)).astype(np.int64)
    taps[:, (k * k - 1) // 2] = out
    return NPTCOperator(taps=taps, out_indices=out, n_input=n_in, k=k,
                        delta=1.0, tag="synthetic")


class _Bound(Module):
    """Binds extra forward arguments (an operator) to a layer."""

    def __init__(self, layer, *extra):
        self.layer = layer
        self.extra = extra

    def parameters(self):
        return self.layer.parameters()

    def forward(self, x):
        return self.layer.forward(x, *self.extra)

    def backward(self, grad):
        return self.layer.backward(grad)


class _Chain(Module):
    def __init__(self, *mods):
        self.mods = mods

    def parameters(self):
        for i, m in enumerate(self.mods):
            for name, p, g in m.parameters():
                yield f"m{i}.{name}", p, g

    def forward(self, x):
        for m in self.mods:
            x = m.forward(x)
        return x

    def backward(self, grad):
        for m in reversed(self.mods):
            grad = m.backward(grad)
        return grad


class _UpsampleConcat(Module):
    """Nearest-coarse upsample + concat with a fixed skip, then a linear."""

    def __init__(self, hierarchy, skip, c_in, c_out, rng):
        self.hierarchy = hierarchy
        self.skip = skip
        self.linear = Linear(c_in + skip.shape[1], c_out, rng, np.float64)

    def parameters(self):
        return self.linear.parameters()

    def forward(self, x):
        self._c = x.shape[1]
        up = x[self.hierarchy.nearest_coarse[0]]
        return self.linear.forward(np.concatenate([up, self.skip], axis=1))

    def backward(self, grad):
        g = self.linear.backward(grad)[:, : self._c]
        coarse = np.zeros((self.hierarchy.size(1), self._c))
        np.add.at(coarse, self.hierarchy.nearest_coarse[0], g)
        return coarse


def standard_fragments(seed: int):
    """Yield (name, fragment, input) covering every layer type plus the
    two-level encoder fragment (N=64, c=8, K=3)."""
    rng = np.random.default_rng(1000 + seed)
    f64 = np.float64

    yield "linear", Linear(5, 4, rng, f64), rng.standard_normal((7, 5))
    yield "mlp(relu)", MLP([6, 8, 3], rng, f64), rng.standard_normal((5, 6))

    op = random_operator(12, 12, 3, rng, self_map=True)
    yield "conv K=3", _Bound(ConvLayer(3, 4, 5, rng, f64), op), rng.standard_normal((12, 4))

    yield "global max pool", _Chain(GlobalMaxPool(), Linear(6, 3, rng, f64)), \
        rng.standard_normal((9, 6))

    op_res = random_operator(10, 10, 3, rng, self_map=True)
    yield "residual block", _Bound(ResidualBlock(6, 3, rng, f64), op_res), \
        rng.standard_normal((10, 6))

    hier = PointHierarchy(
        levels=[np.arange(12), np.arange(4)],
        nearest_coarse=[rng.integers(0, 4, size=12)],
    )
    skip = rng.standard_normal((12, 3))
    yield "upsample+concat", _UpsampleConcat(hier, skip, 5, 4, rng), \
        rng.standard_normal((4, 5))

    # two-level encoder fragment: conv down, residual, pool, head
    n0, n1, c, k = 64, 16, 8, 3
    down = random_operator(n0, n1, k, rng)
    res = random_operator(n1, n1, k, rng, self_map=True)
    frag = _Chain(
        _Bound(ConvLayer(k, c, c, rng, f64), down),
        ReLU(),
        _Bound(ResidualBlock(c, k, rng, f64), res),
        GlobalMaxPool(),
        Linear(c, 3, rng, f64),
    )
    yield "two-level fragment N=64 c=8 K=3", frag, rng.standard_normal((n0, c))

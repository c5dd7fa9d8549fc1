"""A small convolutional network on point hierarchies, with every gradient
derived and implemented by hand.

Feature maps are plain dense float arrays, rows = points, cols = channels
(float64 in gradient-check mode, float32 otherwise). Layers cache what
their backward pass needs; a model is used strictly
forward-then-backward, single-threaded.

Architecture (desk scale, our own configuration): the encoder applies,
per level, a strided tap-table convolution onto the coarser level (ReLU)
followed by residual blocks; classification pools the coarsest level and
applies an MLP head, segmentation decodes back up with nearest-coarse
upsampling, skip concatenation and per-level MLPs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import operator as op_mod
from .errors import ArgumentError, ConfigError, ShapeError
from .hierarchy import PointHierarchy, upsample_nn
from .operator import NPTCOperator

DEBUG_CHECK_FINITE = False


def _check_finite(x: np.ndarray, where: str):
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(x)):
        raise ShapeError(f"non-finite values at {where}")


# ---------------------------------------------------------------------------
# functional forms
# ---------------------------------------------------------------------------

def mlp(features: np.ndarray, weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray], final_relu: bool = True) -> np.ndarray:
    """Alternating affine map and ReLU.

    The trailing ReLU is dropped when the MLP is used as a classifier head
    (``final_relu=False``).
    """
    if len(weights) != len(biases):
        raise ShapeError("weights and biases counts differ")
    out = np.asarray(features)
    for i, (w, b) in enumerate(zip(weights, biases)):
        if out.shape[1] != w.shape[0]:
            raise ShapeError(f"layer {i}: {out.shape[1]} channels into {w.shape} matrix")
        out = out @ w + b
        if final_relu or i + 1 < len(weights):
            out = np.maximum(out, 0.0)
    return out


def global_max_pool(features: np.ndarray):
    """Column-wise max plus the argmax rows the backward pass routes to.

    Ties route to the first-occurring row.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ShapeError(f"expected a non-empty (N, C) array, got {features.shape}")
    rows = np.argmax(features, axis=0)
    return features[rows, np.arange(features.shape[1])], rows


def concat(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Channel-wise concatenation of two feature maps on the same points."""
    f1, f2 = np.asarray(f1), np.asarray(f2)
    if f1.shape[0] != f2.shape[0]:
        raise ShapeError(f"row mismatch: {f1.shape[0]} vs {f2.shape[0]}")
    return np.concatenate([f1, f2], axis=1)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Softmax + mean negative log-likelihood, and the logits gradient.

    ``labels`` is an integer class vector or a one-hot matrix. Returns
    (loss, grad) with grad = (softmax - onehot) / rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (rows, classes), got {logits.shape}")
    rows, classes = logits.shape
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != logits.shape:
            raise ShapeError(f"one-hot labels {labels.shape} != logits {logits.shape}")
        idx = np.argmax(labels, axis=1)
    else:
        idx = labels.astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= classes):
        raise ArgumentError("label index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logz - shifted[np.arange(rows), idx]))
    softmax = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    grad = softmax.copy()
    grad[np.arange(rows), idx] -= 1.0
    grad /= rows
    return loss, grad


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.asarray(logits, dtype=np.float64)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _init_uniform(rng, fan_in: int, shape, dtype):
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Module:
    """Minimal layer protocol: forward caches, backward consumes the cache
    and accumulates parameter gradients in place."""

    def parameters(self):
        return iter(())

    def zero_grad(self):
        for _, _, g in self.parameters():
            g[...] = 0.0


class Linear(Module):
    def __init__(self, c_in, c_out, rng, dtype=np.float32):
        self.w = _init_uniform(rng, c_in, (c_in, c_out), dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def parameters(self):
        yield "w", self.w, self.gw
        yield "b", self.b, self.gb

    def forward(self, x):
        if x.shape[1] != self.w.shape[0]:
            raise ShapeError(f"linear: {x.shape[1]} channels into {self.w.shape}")
        _check_finite(x, "linear input")
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad):
        self.gw += self._x.T @ grad
        self.gb += grad.sum(axis=0)
        return grad @ self.w.T


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class MLP(Module):
    """Affine/ReLU chain; no trailing ReLU when ``final_relu`` is False."""

    def __init__(self, widths: Sequence[int], rng, dtype=np.float32,
                 final_relu: bool = True):
        self.layers = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            self.layers.append(Linear(a, b, rng, dtype))
            if final_relu or i + 2 < len(widths):
                self.layers.append(ReLU())

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p, g in layer.parameters():
                yield f"l{i}.{name}", p, g

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ConvLayer(Module):
    """Tap-table convolution; the gather table is supplied per forward call
    because it belongs to the cloud, not the model."""

    def __init__(self, k, c_in, c_out, rng, dtype=np.float32):
        kk = k * k
        self.k = k
        self.w = _init_uniform(rng, kk * c_in, (kk, c_in, c_out), dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)

    def parameters(self):
        yield "w", self.w, self.gw
        yield "b", self.b, self.gb

    def forward(self, x, op: NPTCOperator):
        if op.k != self.k:
            raise ShapeError(f"operator K={op.k} != layer K={self.k}")
        self._x = x
        self._op = op
        return op_mod.apply(op, self.w, x) + self.b

    def backward(self, grad):
        gx, gw = op_mod.apply_adjoint(self._op, self.w, self._x, grad)
        self.gw += gw
        self.gb += grad.sum(axis=0)
        return gx


class GlobalMaxPool(Module):
    def forward(self, x):
        pooled, rows = global_max_pool(x)
        self._rows = rows
        self._n = x.shape[0]
        return pooled[None, :]

    def backward(self, grad):
        grad = np.asarray(grad).reshape(-1)
        gx = np.zeros((self._n, grad.shape[0]), dtype=grad.dtype)
        gx[self._rows, np.arange(grad.shape[0])] = grad
        return gx


class ResidualBlock(Module):
    """MLP c -> c/2, convolution c/2 -> c/2 on the same points, MLP
    c/2 -> c, plus the identity skip."""

    def __init__(self, c, k, rng, dtype=np.float32):
        if c % 2 != 0:
            raise ConfigError(f"residual block needs an even width, got {c}")
        half = c // 2
        self.reduce = Linear(c, half, rng, dtype)
        self.relu1 = ReLU()
        self.conv = ConvLayer(k, half, half, rng, dtype)
        self.relu2 = ReLU()
        self.expand = Linear(half, c, rng, dtype)

    def parameters(self):
        for prefix, mod in (("reduce", self.reduce), ("conv", self.conv),
                            ("expand", self.expand)):
            for name, p, g in mod.parameters():
                yield f"{prefix}.{name}", p, g

    def forward(self, x, op: NPTCOperator):
        if op.n_out != x.shape[0] or op.n_input != x.shape[0]:
            raise ShapeError("residual block operator must map the point set to itself")
        h = self.relu1.forward(self.reduce.forward(x))
        h = self.relu2.forward(self.conv.forward(h, op))
        return x + self.expand.forward(h)

    def backward(self, grad):
        g = self.expand.backward(grad)
        g = self.conv.backward(self.relu2.backward(g))
        g = self.reduce.backward(self.relu1.backward(g))
        return grad + g


def residual_block(features: np.ndarray, op: NPTCOperator, params: dict) -> np.ndarray:
    """Functional residual block from explicit parameter arrays.

    ``params`` holds w_reduce/b_reduce, w_conv/b_conv, w_expand/b_expand.
    All-zero parameters reduce it to the identity skip.
    """
    c = features.shape[1]
    if c % 2 != 0:
        raise ConfigError(f"residual block needs an even width, got {c}")
    h = np.maximum(features @ params["w_reduce"] + params["b_reduce"], 0.0)
    h = np.maximum(op_mod.apply(op, params["w_conv"], h) + params["b_conv"], 0.0)
    return features + h @ params["w_expand"] + params["b_expand"]


# ---------------------------------------------------------------------------
# configuration and model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    """Desk-scale network shape. Widths/depths are our own choice."""

    task: Tuple[str, int] = ("classification", 3)
    ratios: Tuple[float, ...] = (1.0, 0.25, 0.0625)
    widths: Tuple[int, ...] = (32, 64)
    head_hidden: int = 128
    decode_widths: Tuple[int, ...] = (32, 16)
    residual_blocks: int = 1
    kernel_k: int = 3
    in_channels: int = 3

    def __post_init__(self):
        kind, n = self.task
        if kind not in ("classification", "segmentation") or n < 2:
            raise ConfigError(f"bad task {self.task}")
        if len(self.ratios) < 1:
            raise ConfigError("at least one hierarchy level is required")
        if len(self.widths) != len(self.ratios) - 1:
            raise ConfigError(
                f"{len(self.ratios)} levels need {len(self.ratios) - 1} widths, "
                f"got {len(self.widths)}"
            )
        if any(w % 2 for w in self.widths):
            raise ConfigError(f"widths must be even (residual blocks halve them): {self.widths}")
        if kind == "segmentation" and len(self.decode_widths) != len(self.widths):
            raise ConfigError("decode_widths must match the number of encoder stages")


@dataclass
class CloudBundle:
    """Per-cloud geometry the network consumes: hierarchy levels plus the
    precomputed strided and residual operators per stage."""

    points: np.ndarray
    hierarchy: PointHierarchy
    down_ops: List[NPTCOperator]
    res_ops: List[NPTCOperator]  # one per stage, shared by that stage's blocks
    label: int = -1
    part_labels: Optional[np.ndarray] = None


class NPTCNet:
    """Encoder/decoder network over precomputed tap tables."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        k = cfg.kernel_k
        self.down_convs: List[ConvLayer] = []
        self.down_relus: List[ReLU] = []
        self.res_blocks: List[List[ResidualBlock]] = []
        channels = [cfg.in_channels] + list(cfg.widths)
        for c_in, c_out in zip(channels, channels[1:]):
            self.down_convs.append(ConvLayer(k, c_in, c_out, rng, dtype))
            self.down_relus.append(ReLU())
            self.res_blocks.append(
                [ResidualBlock(c_out, k, rng, dtype) for _ in range(cfg.residual_blocks)]
            )
        kind, n_out = cfg.task
        if kind == "classification":
            self.pool = GlobalMaxPool()
            self.head = MLP([channels[-1], cfg.head_hidden, n_out], rng, dtype,
                            final_relu=False)
            self.dec_mlps = []
        else:
            self.pool = None
            self.dec_mlps = []
            carry = channels[-1]
            for stage in range(len(cfg.widths) - 1, -1, -1):
                skip = channels[stage]
                width = cfg.decode_widths[stage]
                self.dec_mlps.append(MLP([carry + skip, width], rng, dtype))
                carry = width
            self.head = MLP([carry, n_out], rng, dtype, final_relu=False)

    # -- parameters -------------------------------------------------------

    def _named_modules(self):
        for i, conv in enumerate(self.down_convs):
            yield f"down{i}", conv
        for i, blocks in enumerate(self.res_blocks):
            for j, block in enumerate(blocks):
                yield f"res{i}.{j}", block
        for i, m in enumerate(self.dec_mlps):
            yield f"dec{i}", m
        yield "head", self.head

    def parameters(self):
        for prefix, mod in self._named_modules():
            for name, p, g in mod.parameters():
                yield f"{prefix}.{name}", p, g

    def zero_grad(self):
        for _, p, g in self.parameters():
            g[...] = 0.0

    def state_dict(self):
        return {name: p.copy() for name, p, _ in self.parameters()}

    def load_state_dict(self, state: dict):
        for name, p, _ in self.parameters():
            if name not in state:
                raise ConfigError(f"checkpoint missing parameter {name}")
            if state[name].shape != p.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint {state[name].shape} != model {p.shape}"
                )
            p[...] = state[name].astype(p.dtype)

    # -- forward / backward ------------------------------------------------

    def forward(self, bundle: CloudBundle, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=self.dtype)
        if features.shape != (bundle.hierarchy.size(0), self.cfg.in_channels):
            raise ShapeError(
                f"features {features.shape} != "
                f"({bundle.hierarchy.size(0)}, {self.cfg.in_channels})"
            )
        _check_finite(features, "network input")
        self._bundle = bundle
        skips = []
        f = features
        for i, conv in enumerate(self.down_convs):
            skips.append(f)
            f = self.down_relus[i].forward(conv.forward(f, bundle.down_ops[i]))
            for block in self.res_blocks[i]:
                f = block.forward(f, bundle.res_ops[i])
        if self.cfg.task[0] == "classification":
            return self.head.forward(self.pool.forward(f))
        self._skips = skips
        stages = len(self.down_convs)
        self._concat_splits = []
        for d, dec in enumerate(self.dec_mlps):
            level = stages - d  # decoding from this level up to level-1
            up = upsample_nn(f, bundle.hierarchy, level)
            skip = skips[level - 1]
            self._concat_splits.append((up.shape[1], skip.shape[1]))
            f = dec.forward(concat(up, skip))
        return self.head.forward(f)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        bundle = self._bundle
        stages = len(self.down_convs)
        g = self.head.backward(np.asarray(grad_logits, dtype=self.dtype))
        if self.cfg.task[0] == "classification":
            g = self.pool.backward(g)
        else:
            skip_grads = [None] * stages
            for d in range(len(self.dec_mlps) - 1, -1, -1):
                level = stages - d
                g = self.dec_mlps[d].backward(g)
                c_up, _ = self._concat_splits[d]
                g_up, g_skip = g[:, :c_up], g[:, c_up:]
                skip_grads[level - 1] = g_skip
                # adjoint of the nearest-coarse gather is a scatter-add
                coarse = np.zeros((bundle.hierarchy.size(level), c_up), dtype=g.dtype)
                np.add.at(coarse, bundle.hierarchy.nearest_coarse[level - 1], g_up)
                g = coarse
        for i in range(stages - 1, -1, -1):
            for j in range(len(self.res_blocks[i]) - 1, -1, -1):
                g = self.res_blocks[i][j].backward(g)
            g = self.down_convs[i].backward(self.down_relus[i].backward(g))
            if self.cfg.task[0] == "segmentation" and skip_grads[i] is not None:
                g = g + skip_grads[i]
        return g

    def predict_proba(self, bundle: CloudBundle, features: np.ndarray) -> np.ndarray:
        return softmax(self.forward(bundle, features))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(fragment, x: np.ndarray, rng=None, step: float = 1e-5) -> float:
    """Central finite differences on every parameter and input entry.

    ``fragment`` is anything with forward/backward/parameters (layers take
    extra forward args via a lambda-style wrapper; see tests). The scalar
    probe is <forward(x), R> with a fixed random R. Returns the max
    relative error, guarding denominators at 1e-12.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    y = fragment.forward(x)
    r = rng.standard_normal(y.shape)

    fragment.zero_grad()
    fragment.forward(x)
    gx = fragment.backward(r)
    analytic = {name: g.copy() for name, _, g in fragment.parameters()}

    def probe():
        return float(np.sum(fragment.forward(x) * r))

    max_err = 0.0

    def compare(a_val, n_val):
        nonlocal max_err
        err = abs(a_val - n_val) / max(1e-12, abs(a_val) + abs(n_val))
        max_err = max(max_err, err)

    for name, p, _ in fragment.parameters():
        flat = p.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = probe()
            flat[i] = keep - step
            down = probe()
            flat[i] = keep
            compare(aflat[i], (up - down) / (2.0 * step))

    xflat = x.reshape(-1)
    gflat = np.asarray(gx, dtype=np.float64).reshape(-1)
    for i in range(xflat.size):
        keep = xflat[i]
        xflat[i] = keep + step
        up = probe()
        xflat[i] = keep - step
        down = probe()
        xflat[i] = keep
        compare(gflat[i], (up - down) / (2.0 * step))
    return max_err

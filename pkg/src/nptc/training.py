"""Training loop, optimizers, augmentation, voting, and checkpoints.

Runs are deterministic given the rng seed: a single thread, a fixed draw
order (shuffle, then per-cloud rotation/scale/jitter), and fixed-order
parameter updates. Augmented clouds reuse the clean geometry's tap tables;
only the coordinate features are transformed.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, ConfigError, ParseError
from .network import CloudBundle, NPTCNet, cross_entropy, softmax

_CKPT_MAGIC = b"NPCK"
_CKPT_VERSION = 1

CUBE_CENTER = np.array([0.5, 0.5, 0.5])


@dataclass(frozen=True)
class AugmentConfig:
    rotation: bool = True
    scale_range: Tuple[float, float] = (0.9, 1.1)
    jitter_sigma: float = 0.01

    @property
    def enabled(self) -> bool:
        return self.rotation or self.scale_range != (1.0, 1.0) or self.jitter_sigma > 0


AUGMENT_OFF = AugmentConfig(rotation=False, scale_range=(1.0, 1.0), jitter_sigma=0.0)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    lr: float = 0.1
    momentum: float = 0.0
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    augment: AugmentConfig = AugmentConfig()
    seed: int = 0
    voting_rounds: int = 1
    # lr 0.1 on a freshly initialized net produces early steps large enough
    # to kill every ReLU; clipping the global gradient norm keeps the pinned
    # rate usable without a schedule
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.voting_rounds < 1:
            raise ConfigError(f"voting_rounds must be >= 1, got {self.voting_rounds}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainingSet:
    """Precomputed bundles with labels and a recorded train/test split."""

    bundles: List[CloudBundle]
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray


def augment_coordinates(points: np.ndarray, rng, cfg: AugmentConfig) -> np.ndarray:
    """Rotate (about the cube's z axis), scale, and jitter coordinates.

    The draws happen in a fixed order even when individual pieces are
    disabled would change nothing, so seeds stay comparable only across
    identical configs.
    """
    p = points - CUBE_CENTER
    if cfg.rotation:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        p = p @ rot.T
    lo, hi = cfg.scale_range
    if (lo, hi) != (1.0, 1.0):
        p = p * rng.uniform(lo, hi)
    p = p + CUBE_CENTER
    if cfg.jitter_sigma > 0:
        p = p + rng.normal(0.0, cfg.jitter_sigma, size=p.shape)
    return p


class SGD:
    def __init__(self, params, lr, momentum=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for _, p, _ in self.params]

    def step(self):
        for (name, p, g), v in zip(self.params, self.velocity):
            v *= self.momentum
            v += g
            p -= (self.lr * v).astype(p.dtype)


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p, dtype=np.float64) for _, p, _ in self.params]
        self.v = [np.zeros_like(p, dtype=np.float64) for _, p, _ in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for (name, p, g), m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g.astype(np.float64) ** 2
            update = (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))
            p -= update.astype(p.dtype)


def make_optimizer(model: NPTCNet, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(model.parameters(), cfg.lr, cfg.momentum)
    return Adam(model.parameters(), cfg.lr, cfg.betas, cfg.eps)


def features_from_points(points: np.ndarray) -> np.ndarray:
    """Coordinate features are centered on the cube so they are zero-mean."""
    return np.asarray(points) - CUBE_CENTER


def _clip_gradients(model: NPTCNet, clip_norm: float) -> None:
    if clip_norm <= 0:
        return
    total = 0.0
    for _, _, g in model.parameters():
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm > clip_norm:
        scale = clip_norm / norm
        for _, _, g in model.parameters():
            g *= scale


def _forward_loss(model: NPTCNet, bundle: CloudBundle, features: np.ndarray):
    logits = model.forward(bundle, features)
    if model.cfg.task[0] == "classification":
        labels = np.array([bundle.label])
    else:
        labels = bundle.part_labels
        if labels is None:
            raise ArgumentError("segmentation training needs per-point labels")
    return cross_entropy(logits, labels)


def train(model: NPTCNet, dataset: TrainingSet, cfg: TrainConfig):
    """Optimize the model on the training split.

    Returns a metrics log: one (epoch, mean train loss, test accuracy) row
    per epoch. Deterministic given cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(model, cfg)
    metrics = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(dataset.train_idx)
        losses = []
        for chunk_start in range(0, order.size, cfg.batch_size):
            chunk = order[chunk_start:chunk_start + cfg.batch_size]
            model.zero_grad()
            batch_loss = 0.0
            for ci in chunk:
                bundle = dataset.bundles[ci]
                feats = features_from_points(
                    augment_coordinates(bundle.points, rng, cfg.augment))
                loss, grad = _forward_loss(model, bundle, feats)
                model.backward(grad / chunk.size)
                batch_loss += loss
            # gradients were accumulated as the batch mean
            _clip_gradients(model, cfg.clip_norm)
            opt.step()
            losses.append(batch_loss / chunk.size)
        acc = evaluate(model, dataset)
        metrics.append((epoch, float(np.mean(losses)), acc))
    return metrics


def evaluate(model: NPTCNet, dataset: TrainingSet,
             indices: Optional[np.ndarray] = None) -> float:
    """Plain single-inference accuracy over the test split (or ``indices``)."""
    idx = dataset.test_idx if indices is None else indices
    if len(idx) == 0:
        return float("nan")
    correct = 0
    for ci in idx:
        bundle = dataset.bundles[ci]
        proba = model.predict_proba(bundle, features_from_points(bundle.points))
        if model.cfg.task[0] == "classification":
            correct += int(np.argmax(proba[0]) == bundle.label)
        else:
            correct += float(np.mean(np.argmax(proba, axis=1) == bundle.part_labels))
    return correct / len(idx)


def predict_with_voting(model: NPTCNet, bundle: CloudBundle, n_a: int = 1,
                        seed: int = 0,
                        augment: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Average the softmax outputs over n_a augmented inferences."""
    if n_a < 1:
        raise ArgumentError(f"n_a must be >= 1, got {n_a}")
    rng = np.random.default_rng(seed)
    acc = None
    for _ in range(n_a):
        feats = features_from_points(augment_coordinates(bundle.points, rng, augment))
        proba = softmax(model.forward(bundle, feats))
        acc = proba if acc is None else acc + proba
    return acc / n_a


# ---------------------------------------------------------------------------
# metrics + checkpoints
# ---------------------------------------------------------------------------

def write_metrics_csv(path, metrics: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "loss", "accuracy"])
        for epoch, loss, acc in metrics:
            writer.writerow([epoch, f"{loss:.9g}", f"{acc:.9g}"])


def save_checkpoint(model: NPTCNet, path, upstream_hash: bytes = b"\0" * 32) -> None:
    """Binary checkpoint: magic, version, upstream sha256, then named
    little-endian float32 blobs."""
    if len(upstream_hash) != 32:
        raise ArgumentError("upstream_hash must be 32 bytes")
    state = model.state_dict()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(state)))
        f.write(bytes(upstream_hash))
        for name, arr in state.items():
            blob = name.encode()
            f.write(struct.pack("<H", len(blob)))
            f.write(blob)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (state dict of float32 arrays, upstream hash bytes)."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise ParseError("bad checkpoint magic", path=str(path))
        version, count = struct.unpack("<II", f.read(8))
        if version != _CKPT_VERSION:
            raise ParseError(f"unsupported checkpoint version {version}", path=str(path))
        upstream = f.read(32)
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(f.read(4 * size), dtype="<f4").reshape(shape)
            state[name] = data.copy()
    return state, upstream

"""Labeled desk-scale datasets sampled from parametric surfaces.

Shapes are sampled area-uniformly with analytic normals, normalized into
the unit cube, and are reproducible from (spec, seed): per-cloud rng
streams are spawned from a single SeedSequence so generation order never
matters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .cloud import PointCloud, normalize_to_unit_cube, save_xyz_text
from .errors import ArgumentError

FAMILIES = ("sphere", "torus", "cube-surface", "plane")


@dataclass(frozen=True)
class DatasetSpec:
    families: Tuple[str, ...] = ("sphere", "torus", "cube-surface")
    clouds_per_family: int = 100
    points_per_cloud: int = 512
    seed: int = 0
    test_fraction: float = 0.2
    margin: float = 0.05
    random_rotation: bool = False


@dataclass
class SyntheticDataset:
    clouds: List[PointCloud]
    labels: np.ndarray
    part_labels: List[np.ndarray]
    train_idx: np.ndarray
    test_idx: np.ndarray
    spec: DatasetSpec
    family_names: Tuple[str, ...]


def sample_shape(family: str, n: int, params: Optional[dict] = None,
                 rng=None, margin: float = 0.05) -> Tuple[PointCloud, np.ndarray]:
    """Area-uniform sample of one surface, normalized to the unit cube.

    Returns (cloud, part_labels). Normals are analytic and survive
    normalization unchanged (the scale is isotropic). Part labels:
    sphere = hemisphere by z, torus = outer/inner half of the tube,
    cube-surface = face id, plane = all zero.
    """
    if family not in FAMILIES:
        raise ArgumentError(f"unknown family {family!r}")
    if n < 16:
        raise ArgumentError(f"need n >= 16 points, got {n}")
    params = dict(params or {})
    if rng is None:
        rng = np.random.default_rng(0)

    if family == "sphere":
        radius = params.get("radius", 0.5)
        if radius <= 0:
            raise ArgumentError(f"sphere radius must be positive, got {radius}")
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        pts = radius * v
        normals = v
        parts = (pts[:, 2] >= 0.0).astype(np.int64)
    elif family == "torus":
        big_r = params.get("R", 0.3)
        small_r = params.get("r", 0.1)
        if not (big_r > small_r > 0):
            raise ArgumentError(f"torus needs R > r > 0, got R={big_r} r={small_r}")
        u = rng.uniform(0.0, 2.0 * np.pi, size=n)
        v = _torus_tube_angles(n, big_r, small_r, rng)
        ring = big_r + small_r * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u), small_r * np.sin(v)], axis=1)
        normals = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
        parts = (np.cos(v) < 0.0).astype(np.int64)  # inner half of the tube
    elif family == "cube-surface":
        side = params.get("side", 1.0)
        if side <= 0:
            raise ArgumentError(f"cube side must be positive, got {side}")
        face = rng.integers(0, 6, size=n)
        ab = rng.uniform(-0.5, 0.5, size=(n, 2)) * side
        pts = np.empty((n, 3))
        normals = np.zeros((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        for a in range(3):
            mask = axis == a
            others = [o for o in range(3) if o != a]
            pts[mask, a] = sign[mask] * 0.5 * side
            pts[mask, others[0]] = ab[mask, 0]
            pts[mask, others[1]] = ab[mask, 1]
            normals[mask, a] = sign[mask]
        parts = face.astype(np.int64)
    else:  # plane
        side = params.get("side", 1.0)
        pts = np.column_stack([
            rng.uniform(-0.5, 0.5, size=n) * side,
            rng.uniform(-0.5, 0.5, size=n) * side,
            np.zeros(n),
        ])
        normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        parts = np.zeros(n, dtype=np.int64)

    if params.get("rotate") is not None:
        q = np.asarray(params["rotate"], dtype=np.float64)
        pts = pts @ q.T
        normals = normals @ q.T

    cloud = normalize_to_unit_cube(PointCloud(points=pts, normals=normals), margin=margin)
    return cloud, parts


def _torus_tube_angles(n: int, big_r: float, small_r: float, rng) -> np.ndarray:
    """Tube angles with density prop. to R + r*cos(v) (area-uniform)."""
    out = np.empty(0)
    while out.size < n:
        cand = rng.uniform(0.0, 2.0 * np.pi, size=2 * (n - out.size) + 16)
        accept = rng.uniform(0.0, 1.0, size=cand.size) < (
            (big_r + small_r * np.cos(cand)) / (big_r + small_r)
        )
        out = np.concatenate([out, cand[accept]])
    return out[:n]


def _random_rotation(rng) -> np.ndarray:
    """Uniform random rotation via QR of a Gaussian matrix."""
    m = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(m)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


def make_dataset(spec: DatasetSpec) -> SyntheticDataset:
    """Deterministic, class-balanced dataset with a recorded 80/20-style split.

    Torus tube ratios vary per cloud so the class is not one rigid shape;
    sphere and cube scale variation is removed by normalization anyway.
    """
    for fam in spec.families:
        if fam not in FAMILIES:
            raise ArgumentError(f"unknown family {fam!r}")
    streams = np.random.SeedSequence(spec.seed).spawn(
        len(spec.families) * spec.clouds_per_family + 1
    )
    clouds, labels, parts = [], [], []
    si = 0
    for label, fam in enumerate(spec.families):
        for _ in range(spec.clouds_per_family):
            rng = np.random.default_rng(streams[si])
            si += 1
            params = {}
            if fam == "torus":
                params = {"R": 0.3, "r": rng.uniform(0.075, 0.135)}
            if spec.random_rotation:
                params["rotate"] = _random_rotation(rng)
            cloud, part = sample_shape(fam, spec.points_per_cloud, params, rng,
                                       margin=spec.margin)
            clouds.append(cloud)
            labels.append(label)
            parts.append(part)

    split_rng = np.random.default_rng(streams[si])
    labels = np.asarray(labels, dtype=np.int64)
    train, test = [], []
    # per-class split keeps both sides balanced
    for label in range(len(spec.families)):
        members = np.nonzero(labels == label)[0]
        perm = split_rng.permutation(members)
        n_test = int(round(spec.test_fraction * members.size))
        test.extend(perm[:n_test])
        train.extend(perm[n_test:])
    return SyntheticDataset(
        clouds=clouds, labels=labels, part_labels=parts,
        train_idx=np.sort(np.asarray(train, dtype=np.int64)),
        test_idx=np.sort(np.asarray(test, dtype=np.int64)),
        spec=spec, family_names=tuple(spec.families),
    )


def write_dataset(dataset: SyntheticDataset, directory) -> Path:
    """Write clouds as xyz-text plus a JSON manifest with labels and split."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, (cloud, label) in enumerate(zip(dataset.clouds, dataset.labels)):
        name = f"cloud_{i:04d}.xyz"
        save_xyz_text(cloud, directory / name)
        np.savetxt(directory / f"cloud_{i:04d}.parts.txt",
                   dataset.part_labels[i], fmt="%d")
        records.append({"file": name, "label": int(label),
                        "family": dataset.family_names[int(label)],
                        "parts_file": f"cloud_{i:04d}.parts.txt"})
    manifest = {
        "families": list(dataset.family_names),
        "points_per_cloud": dataset.spec.points_per_cloud,
        "seed": dataset.spec.seed,
        "clouds": records,
        "train": [int(v) for v in dataset.train_idx],
        "test": [int(v) for v in dataset.test_idx],
    }
    path = directory / "manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1)
    return path

"""Farthest point sampling and the nested multi-resolution point sets.

Level 0 is the full cloud; each coarser level is an FPS subset of the one
above started from the same point, which guarantees nestedness. Distances
are compared squared (monotonic in the Euclidean distance), with ties
broken by lowest point index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .errors import ArgumentError, ShapeError


@dataclass(frozen=True)
class PointHierarchy:
    """levels[i] are base-cloud indices; nearest_coarse[i] maps each point
    of level i to the position of its nearest point within level i+1."""

    levels: List[np.ndarray]
    nearest_coarse: List[np.ndarray]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def size(self, i: int) -> int:
        return self.levels[i].shape[0]


def farthest_point_sampling(cloud: PointCloud, subset: Sequence[int], n: int,
                            start: int) -> np.ndarray:
    """Greedy FPS over ``subset``: repeatedly append the point maximizing
    the minimum squared distance to the chosen set. Returns base indices."""
    subset = np.asarray(subset, dtype=np.int64)
    if n < 1 or n > subset.size:
        raise ArgumentError(f"n must be in [1, {subset.size}], got {n}")
    pos_of_start = np.nonzero(subset == start)[0]
    if pos_of_start.size == 0:
        raise ArgumentError(f"start index {start} not in subset")
    pts = cloud.points[subset]
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = pos_of_start[0]
    diff = pts - pts[chosen[0]]
    d2 = np.einsum("ni,ni->n", diff, diff)
    for i in range(1, n):
        best = d2.max()
        ties = np.nonzero(d2 == best)[0]
        nxt = ties[np.argmin(subset[ties])]
        chosen[i] = nxt
        diff = pts - pts[nxt]
        d2 = np.minimum(d2, np.einsum("ni,ni->n", diff, diff))
    return subset[chosen]


def build_hierarchy(cloud: PointCloud, ratios: Sequence[float],
                    start: int = 0) -> PointHierarchy:
    """Nested levels with sizes round(ratio * N); ratios[0] must be 1.

    Every level is sampled from the previous one with the same start
    point. The nearest-coarse maps are exact (same tie rule as k_nearest).
    """
    n = len(cloud)
    ratios = list(ratios)
    if not ratios:
        raise ArgumentError("ratios must be non-empty")
    if ratios[0] != 1:
        raise ArgumentError(f"ratios[0] must be 1 (level 0 is the full cloud), got {ratios[0]}")
    sizes = [max(1, int(round(r * n))) for r in ratios]
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise ArgumentError(f"level sizes must strictly decrease, got {sizes}")
    if not (0 <= start < n):
        raise ArgumentError(f"start index {start} out of range")

    levels = [np.arange(n, dtype=np.int64)]
    for size in sizes[1:]:
        levels.append(farthest_point_sampling(cloud, levels[-1], size, start))

    nearest_coarse = []
    for fine, coarse in zip(levels, levels[1:]):
        coarse_cloud = PointCloud(points=cloud.points[coarse])
        idx = NeighborIndex(coarse_cloud).k_nearest(cloud.points[fine], 1)
        nearest_coarse.append(idx.ravel())
    return PointHierarchy(levels=levels, nearest_coarse=nearest_coarse)


def upsample_nn(coarse_features: np.ndarray, hierarchy: PointHierarchy,
                level: int) -> np.ndarray:
    """Transfer features from level ``level`` to level ``level - 1`` by
    nearest-coarse copy."""
    if not (1 <= level < hierarchy.n_levels):
        raise ArgumentError(f"level must be in [1, {hierarchy.n_levels - 1}], got {level}")
    coarse_features = np.asarray(coarse_features)
    if coarse_features.shape[0] != hierarchy.size(level):
        raise ShapeError(
            f"coarse_features has {coarse_features.shape[0]} rows, "
            f"level {level} has {hierarchy.size(level)} points"
        )
    return coarse_features[hierarchy.nearest_coarse[level - 1]]

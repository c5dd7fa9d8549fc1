"""Shared oracles and generators for the test suite.

The oracles here are deliberately independent of the library paths they
check: plain argsorts, dense convolutions, greedy loops.
"""

import numpy as np


def brute_force_knn(points: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Stable distance sort: ascending d^2, ties by lowest index."""
    diff = points - query
    d2 = np.einsum("ni,ni->n", diff, diff)
    return np.argsort(d2, kind="stable")[:k]


def brute_force_fps(points: np.ndarray, subset, n: int, start: int) -> np.ndarray:
    """Greedy reference FPS over base indices, squared distances,
    ties by lowest base index."""
    subset = list(subset)
    chosen = [start]
    d2 = {i: float(np.sum((points[i] - points[start]) ** 2)) for i in subset}
    for _ in range(n - 1):
        best = max(d2[i] for i in subset if i not in chosen)
        candidates = [i for i in subset if i not in chosen and d2[i] == best]
        nxt = min(candidates)
        chosen.append(nxt)
        for i in subset:
            d2[i] = min(d2[i], float(np.sum((points[i] - points[nxt]) ** 2)))
    return np.asarray(chosen)


def fibonacci_sphere(n: int, radius: float, center=0.5):
    """Deterministic near-uniform sphere sample; returns (points, unit dirs)."""
    i = np.arange(n)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(1.0 - z * z)
    theta = golden * i
    d = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    return center + radius * d, d


def grid_plane_cloud(n: int, z: float = 0.5, lo: float = 0.0, hi: float = 1.0):
    """n x n grid in the plane of constant z, row-major (ix * n + iy)."""
    axis = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, z)])
    normals = np.tile([0.0, 0.0, 1.0], (n * n, 1))
    return pts, normals


def dense_conv2d(grid_features: np.ndarray, weights: np.ndarray,
                 offsets) -> np.ndarray:
    """Direct planar convolution oracle.

    grid_features: (n, n, C_in); weights: (T, C_in, C_out); offsets: (T, 2)
    integer grid offsets per tap. Output valid only where every tap stays
    in range; out-of-range taps clamp to the nearest edge cell (matching
    the operator's clamp-to-nearest-point policy on a grid).
    """
    n = grid_features.shape[0]
    c_out = weights.shape[2]
    out = np.zeros((n, n, c_out))
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for t, (dx, dy) in enumerate(offsets):
        sx = np.clip(ix + dx, 0, n - 1)
        sy = np.clip(iy + dy, 0, n - 1)
        out += np.einsum("xyc,cd->xyd", grid_features[sx, sy], weights[t])
    return out

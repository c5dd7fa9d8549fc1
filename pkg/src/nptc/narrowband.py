"""Voxel narrow-band approximation of a point cloud.

The unit cube is divided into M^3 cells of edge h = 1/M; a cell is active
when its center lies within epsilon of the nearest cloud point, and cells
containing a point are always active. Candidate cells are found by
Chebyshev dilation from the point-containing cells, so construction never
scans all M^3 cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .errors import ArgumentError


@dataclass(frozen=True)
class VoxelGrid:
    """Regular M^3 lattice over [0,1]^3; voxel (i,j,k) has center ((i+.5)h, ...)."""

    resolution: int

    def __post_init__(self):
        if self.resolution < 1:
            raise ArgumentError(f"resolution must be positive, got {self.resolution}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    def centers(self, ijk: np.ndarray) -> np.ndarray:
        return (np.asarray(ijk, dtype=np.float64) + 0.5) * self.spacing


def containing_voxel(grid: VoxelGrid, x: np.ndarray) -> np.ndarray:
    """Voxel index floor(x*M) per axis, clamped to [0, M-1].

    Accepts a single 3-vector or an (N, 3) batch. Coordinates at 1.0 fall
    in the last cell by the clamp.
    """
    m = grid.resolution
    idx = np.floor(np.asarray(x, dtype=np.float64) * m).astype(np.int64)
    return np.clip(idx, 0, m - 1)


@dataclass(frozen=True)
class NarrowBand:
    """Active voxel set of a cloud with exact center-to-cloud distances.

    ``active`` is (A, 3) int64 voxel indices, ``dist_to_cloud`` the matching
    (A,) distances, and ``lookup`` a flat int32 array of length M^3 mapping
    linear voxel index -> active row (or -1).
    """

    grid: VoxelGrid
    active: np.ndarray
    dist_to_cloud: np.ndarray
    epsilon: float
    lookup: np.ndarray
    occupied_rows: np.ndarray

    @property
    def n_active(self) -> int:
        return self.active.shape[0]

    def linear(self, ijk: np.ndarray) -> np.ndarray:
        m = self.grid.resolution
        ijk = np.asarray(ijk)
        return (ijk[..., 0] * m + ijk[..., 1]) * m + ijk[..., 2]

    def row_of(self, ijk: np.ndarray) -> np.ndarray:
        """Active row id(s) for voxel indices; -1 where inactive."""
        return self.lookup[self.linear(ijk)]


def voxelize_narrowband(cloud: PointCloud, m: int, epsilon: float,
                        index: NeighborIndex | None = None) -> NarrowBand:
    """Build the narrow band of a normalized cloud.

    Activates every voxel whose center is within ``epsilon`` of the nearest
    cloud point, plus every voxel containing a point. Requires
    epsilon >= h/2 so the band is guaranteed to cover the cloud.
    """
    grid = VoxelGrid(m)
    h = grid.spacing
    if epsilon < 0.5 * h:
        raise ArgumentError(
            f"epsilon {epsilon} < h/2 = {0.5 * h}; the band may not cover the cloud"
        )
    if index is None:
        index = NeighborIndex(cloud)

    def linearize(ijk):
        return (ijk[:, 0] * m + ijk[:, 1]) * m + ijk[:, 2]

    containing = containing_voxel(grid, cloud.points)
    occ_linear = np.unique(linearize(containing))

    # Any voxel center within epsilon of a point p satisfies
    # |c - c_p| = |offset|*h < eps + (sqrt(3)/2)h with c_p the center of
    # p's containing voxel, so candidates live in that Euclidean ball of
    # offsets. Dedup through linear indices; sorting rows is far slower.
    rings = int(np.ceil(epsilon / h + np.sqrt(3.0) / 2.0))
    r = np.arange(-rings, rings + 1)
    offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
    offsets = offsets[np.einsum("oi,oi->o", offsets, offsets)
                      < (epsilon / h + np.sqrt(3.0) / 2.0) ** 2]
    occupied = np.stack([occ_linear // (m * m), (occ_linear // m) % m,
                         occ_linear % m], axis=1)
    candidates = (occupied[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    in_range = np.all((candidates >= 0) & (candidates < m), axis=1)
    cand_linear = np.unique(linearize(candidates[in_range]))
    candidates = np.stack([cand_linear // (m * m), (cand_linear // m) % m,
                           cand_linear % m], axis=1)

    dist = index.nearest_distance(grid.centers(candidates))
    keep = dist < epsilon
    keep |= np.isin(cand_linear, occ_linear, assume_unique=True)

    active = candidates[keep]
    dist = dist[keep]

    lookup = np.full(m ** 3, -1, dtype=np.int32)
    lookup[cand_linear[keep]] = np.arange(active.shape[0], dtype=np.int32)
    occupied_rows = lookup[occ_linear]
    return NarrowBand(grid=grid, active=np.ascontiguousarray(active),
                      dist_to_cloud=dist, epsilon=float(epsilon),
                      lookup=lookup, occupied_rows=occupied_rows)


def band_from_voxels(m: int, active_ijk, epsilon: float,
                     dist_to_cloud=None, occupied_ijk=None) -> NarrowBand:
    """Assemble a NarrowBand from explicit voxel indices.

    Used by cache loading and by tests that construct bands directly
    (corridors, slabs). ``dist_to_cloud`` defaults to zeros and
    ``occupied_ijk`` to the full active set.
    """
    grid = VoxelGrid(m)
    active = np.asarray(active_ijk, dtype=np.int64).reshape(-1, 3)
    if np.any(active < 0) or np.any(active >= m):
        raise ArgumentError("active voxel indices out of range")
    linear = (active[:, 0] * m + active[:, 1]) * m + active[:, 2]
    if np.unique(linear).size != linear.size:
        raise ArgumentError("duplicate active voxels")
    if dist_to_cloud is None:
        dist_to_cloud = np.zeros(active.shape[0])
    dist_to_cloud = np.asarray(dist_to_cloud, dtype=np.float64)
    lookup = np.full(m ** 3, -1, dtype=np.int32)
    lookup[linear] = np.arange(active.shape[0], dtype=np.int32)
    if occupied_ijk is None:
        occupied_rows = np.arange(active.shape[0], dtype=np.int32)
    else:
        occ = np.asarray(occupied_ijk, dtype=np.int64).reshape(-1, 3)
        occupied_rows = lookup[(occ[:, 0] * m + occ[:, 1]) * m + occ[:, 2]]
        if np.any(occupied_rows < 0):
            raise ArgumentError("occupied voxel not in active set")
    return NarrowBand(grid=grid, active=active, dist_to_cloud=dist_to_cloud,
                      epsilon=float(epsilon), lookup=lookup,
                      occupied_rows=occupied_rows)


def neighbor_table(band: NarrowBand) -> np.ndarray:
    """(A, 6) active-row ids of each voxel's 6-neighbors, -1 where absent.

    Column order: -x, +x, -y, +y, -z, +z.
    """
    m = band.grid.resolution
    a = band.active
    table = np.full((a.shape[0], 6), -1, dtype=np.int32)
    steps = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    for col, step in enumerate(steps):
        nb = a + np.asarray(step)
        ok = np.all((nb >= 0) & (nb < m), axis=1)
        table[ok, col] = band.row_of(nb[ok])
    return table


def save_band_text(band: NarrowBand, path) -> None:
    """Debug export: one "i j k dist" line per active voxel."""
    with open(path, "w") as f:
        f.write(f"# M={band.grid.resolution} epsilon={band.epsilon:.17g}\n")
        for (i, j, k), d in zip(band.active, band.dist_to_cloud):
            f.write(f"{i} {j} {k} {d:.17g}\n")

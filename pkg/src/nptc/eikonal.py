"""Distance fields on the narrow band: fast marching and interpolation.

Solves |grad rho| = 1 restricted to the active voxels (6-neighborhood,
first-order upwind updates) from a seed set carrying rho = 0, then moves
the solution onto the cloud by trilinear interpolation over whichever of
the 8 surrounding voxel centers are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ._fmm import fmm_solve
from .cloud import PointCloud
from .errors import ArgumentError, DisconnectedBand, InternalError
from .narrowband import NarrowBand, containing_voxel, neighbor_table

_AXES = {"x": 0, "y": 1, "z": 2}

STATE_UNREACHED = 0
STATE_ACCEPTED = 2


@dataclass(frozen=True)
class SeedSet:
    """Voxels initialized to rho = 0, with a provenance record.

    ``source_point`` is the cloud point a single-point seed came from; it
    enables exact initialization around the source (see fast_marching).
    """

    voxels: np.ndarray
    provenance: str
    source_point: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.int64).reshape(-1, 3)
        if v.shape[0] == 0:
            raise ArgumentError("seed set is empty")
        object.__setattr__(self, "voxels", v)
        if self.source_point is not None:
            object.__setattr__(
                self, "source_point",
                np.asarray(self.source_point, dtype=np.float64).reshape(3),
            )


@dataclass(frozen=True)
class GridScalarField:
    """rho per active voxel plus per-voxel state and acceptance rank."""

    values: np.ndarray
    state: np.ndarray
    accept_rank: np.ndarray
    seed_rows: np.ndarray


@dataclass(frozen=True)
class PointScalarField:
    """rho interpolated onto the cloud; out_of_band marks fallback points."""

    values: np.ndarray
    out_of_band: np.ndarray


def select_seed(cloud: PointCloud, band: NarrowBand,
                policy: Union[str, Sequence] = "min:z") -> SeedSet:
    """Choose the seed voxels.

    Policies: "index:<i>" (the voxel containing point i), "min:<axis>"
    (the voxel containing the point with the smallest coordinate along
    x/y/z, ties by lowest index), "face:<axis>:<low|high>" (every active
    voxel on that cube face; used by the planar-reduction tests), or an
    explicit sequence of (i, j, k) voxel indices.
    """
    if not isinstance(policy, str):
        return SeedSet(voxels=np.asarray(policy), provenance="explicit")

    parts = policy.split(":")
    if parts[0] == "index":
        i = int(parts[1])
        if not (0 <= i < len(cloud)):
            raise ArgumentError(f"seed point index {i} out of range (N={len(cloud)})")
        vox = containing_voxel(band.grid, cloud.points[i])
        _require_active(band, vox)
        return SeedSet(voxels=vox[None, :], provenance=f"single-point({i})",
                       source_point=cloud.points[i])
    if parts[0] == "min":
        axis = _AXES.get(parts[1])
        if axis is None:
            raise ArgumentError(f"unknown axis {parts[1]!r}")
        i = int(np.argmin(cloud.points[:, axis]))
        vox = containing_voxel(band.grid, cloud.points[i])
        _require_active(band, vox)
        return SeedSet(voxels=vox[None, :], provenance=f"min-coordinate({parts[1]}, point {i})",
                       source_point=cloud.points[i])
    if parts[0] == "face":
        axis = _AXES.get(parts[1])
        side = parts[2] if len(parts) > 2 else "low"
        if axis is None or side not in ("low", "high"):
            raise ArgumentError(f"bad face policy {policy!r}")
        wanted = 0 if side == "low" else band.grid.resolution - 1
        mask = band.active[:, axis] == wanted
        if not np.any(mask):
            raise ArgumentError(f"no active voxels on face {parts[1]}:{side}")
        return SeedSet(voxels=band.active[mask], provenance=f"plane-edge({parts[1]}, {side})")
    raise ArgumentError(f"unknown seed policy {policy!r}")


def _require_active(band: NarrowBand, vox: np.ndarray) -> None:
    if band.row_of(vox) < 0:
        raise InternalError(
            f"seed voxel {tuple(int(v) for v in vox)} is not active; "
            "narrow-band coverage invariant violated"
        )


EXACT_INIT_RADIUS_CELLS = 12


def fast_marching(band: NarrowBand, seeds: SeedSet,
                  exact_init_cells: int = EXACT_INIT_RADIUS_CELLS) -> GridScalarField:
    """First-order upwind fast marching restricted to the active voxels.

    A single-point seed is a source singularity of the first-order update
    (the error at a voxel 10h away is ~10% and decays only like
    sqrt(h/r)), so when the seed records its source point the active
    voxels within ``exact_init_cells`` cells receive their exact Euclidean
    distance from that point before the march; the seed voxel itself stays
    exactly 0. The ball must be small against the surface's curvature
    radius, where Euclidean and in-band distances agree. Pass 0 to disable.

    Voxels not reachable through active 6-connectivity stay unreached;
    if any point-containing voxel is among them the band is disconnected
    and an error naming one such voxel is raised.
    """
    rows = band.row_of(seeds.voxels)
    if np.any(rows < 0):
        bad = seeds.voxels[np.argmax(rows < 0)]
        raise InternalError(f"seed voxel {tuple(int(v) for v in bad)} is not active")
    nbr = neighbor_table(band)
    h = band.grid.spacing
    seed_rows = rows.astype(np.int64)
    seed_working = np.zeros(seed_rows.size)
    extra_rows = np.empty(0, dtype=np.int64)
    extra_values = np.empty(0)
    if seeds.source_point is not None and exact_init_cells > 0:
        centers = band.grid.centers(band.active)
        dist = np.linalg.norm(centers - seeds.source_point, axis=1)
        seed_working = dist[seed_rows]
        ball = np.nonzero(dist <= exact_init_cells * h)[0]
        extra_rows = ball.astype(np.int64)
        extra_values = dist[ball]
    values, state, rank = fmm_solve(nbr, seed_rows, seed_working,
                                    extra_rows, extra_values, h)
    unreached_occupied = band.occupied_rows[state[band.occupied_rows] != STATE_ACCEPTED]
    if unreached_occupied.size:
        rep = band.active[unreached_occupied[0]]
        raise DisconnectedBand(
            "a point-containing voxel is unreachable from the seed set",
            representative=rep,
        )
    return GridScalarField(values=values, state=state, accept_rank=rank,
                           seed_rows=rows.astype(np.int64))


def interpolate_to_points(field: GridScalarField, band: NarrowBand,
                          cloud: PointCloud) -> PointScalarField:
    """Trilinear interpolation of rho from voxel centers onto the points.

    Weights over the 8 surrounding centers are renormalized to the subset
    that is active and accepted. If none are available the containing
    voxel's value is used and the point is flagged out_of_band.
    """
    occ_state = field.state[band.occupied_rows]
    if np.any(occ_state != STATE_ACCEPTED):
        rep = band.active[band.occupied_rows[np.argmax(occ_state != STATE_ACCEPTED)]]
        raise DisconnectedBand(
            "rho is undefined on a point-containing voxel", representative=rep
        )
    m = band.grid.resolution
    h = band.grid.spacing
    pts = cloud.points
    n = pts.shape[0]

    # Fractional position of each point among the surrounding 8 centers:
    # center of voxel (i,j,k) sits at (i+0.5)h, so the lower corner of the
    # interpolation cell is base = floor(p/h - 0.5).
    g = pts / h - 0.5
    base = np.floor(g).astype(np.int64)
    frac = g - base

    values = np.zeros(n)
    weight_sum = np.zeros(n)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = base + np.array([dx, dy, dz])
                ok = np.all((corner >= 0) & (corner < m), axis=1)
                rows = np.full(n, -1, dtype=np.int64)
                rows[ok] = band.row_of(corner[ok])
                ok &= rows >= 0
                ok[ok] &= field.state[rows[ok]] == STATE_ACCEPTED
                wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
                wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                w = wx * wy * wz
                values[ok] += w[ok] * field.values[rows[ok]]
                weight_sum[ok] += w[ok]

    out_of_band = weight_sum <= 0.0
    good = ~out_of_band
    values[good] /= weight_sum[good]
    if np.any(out_of_band):
        fallback_rows = band.row_of(containing_voxel(band.grid, pts[out_of_band]))
        values[out_of_band] = field.values[fallback_rows]
    return PointScalarField(values=values, out_of_band=out_of_band)

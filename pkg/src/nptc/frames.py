"""Per-point tangent frames: LPCA bases, least-squares gradients, and the
frame field (u1, u2, n) whose axes carry the convolution kernel.

u1 is the tangent-plane projection of the distance-field gradient, u2 the
cross product u1 x n. Points where the projected gradient vanishes (the
distance seed, degenerate neighborhoods) are flagged singular and fall
back to the LPCA principal direction so every point stays convolvable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .eikonal import PointScalarField
from .errors import ArgumentError

SINGULAR_TOL = 1e-6
_DEGENERATE_EIG = 1e-18


@dataclass(frozen=True)
class TangentFrame:
    """Orthonormal triple at one point."""

    u1: np.ndarray
    u2: np.ndarray
    n: np.ndarray
    singular: bool


@dataclass(frozen=True)
class FrameField:
    """Struct-of-arrays frame field over a cloud."""

    u1: np.ndarray
    u2: np.ndarray
    n: np.ndarray
    singular: np.ndarray
    seed_index: int

    @property
    def n_singular(self) -> int:
        return int(np.count_nonzero(self.singular))

    def frame(self, i: int) -> TangentFrame:
        return TangentFrame(u1=self.u1[i], u2=self.u2[i], n=self.n[i],
                            singular=bool(self.singular[i]))

    def __len__(self):
        return self.u1.shape[0]


def _fix_sign(vectors: np.ndarray) -> np.ndarray:
    """Deterministic sign: make the first nonzero component positive."""
    v = vectors.copy()
    nonzero = v != 0.0
    first = np.argmax(nonzero, axis=1)
    has_any = nonzero.any(axis=1)
    lead = v[np.arange(v.shape[0]), first]
    flip = has_any & (lead < 0.0)
    v[flip] *= -1.0
    return v


def lpca_basis(cloud: PointCloud, k: int = 16,
               index: Optional[NeighborIndex] = None):
    """Local-PCA basis per point from the covariance of its k neighbors.

    Returns (t1, t2, n_est, degenerate): t1/t2 are the eigenvectors of the
    two largest covariance eigenvalues (the tangent plane), n_est the
    smallest-eigenvalue eigenvector. The neighborhood of a cloud point
    includes the point itself. ``degenerate`` marks zero-covariance
    neighborhoods (all k neighbors coincident).
    """
    if k < 4:
        raise ArgumentError(f"LPCA needs k >= 4, got {k}")
    if index is None:
        index = NeighborIndex(cloud)
    idx = index.k_nearest(cloud.points, k)
    nb = cloud.points[idx]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nka,nkb->nab", centered, centered)
    eigvals, eigvecs = np.linalg.eigh(cov)
    n_est = _fix_sign(eigvecs[:, :, 0])
    t2 = _fix_sign(eigvecs[:, :, 1])
    t1 = _fix_sign(eigvecs[:, :, 2])
    degenerate = eigvals[:, 2] < _DEGENERATE_EIG
    return t1, t2, n_est, degenerate


def ls_gradient(cloud: PointCloud, rho: PointScalarField, k: int = 16,
                index: Optional[NeighborIndex] = None):
    """Least-squares estimate of grad(rho) at every point.

    Fits <g, x_k - x> to rho(x_k) - rho(x) over the k-1 nearest neighbors
    of each point (self excluded), with a Tikhonov term
    lambda = 1e-8 * (mean |x_k - x|)^2 so rank-deficient neighborhoods stay
    well-posed. Returns (g, rank_deficient).
    """
    if k < 4:
        raise ArgumentError(f"ls_gradient needs k >= 4, got {k}")
    if index is None:
        index = NeighborIndex(cloud)
    pts = cloud.points
    n = pts.shape[0]
    idx = index.k_nearest(pts, k)

    # Drop each point's own entry; when duplicates push it out of the k
    # hits, drop the farthest instead so every row keeps k-1 neighbors.
    is_self = idx == np.arange(n)[:, None]
    drop = np.where(is_self.any(axis=1), np.argmax(is_self, axis=1), k - 1)
    keep = np.argsort(np.arange(k)[None, :] == drop[:, None], axis=1,
                      kind="stable")[:, : k - 1]
    neighbors = np.take_along_axis(idx, keep, axis=1)

    # every point anchors its own residual row, so any out-of-band value taints a fit
    if np.any(rho.out_of_band):
        raise ArgumentError("rho has out-of-band points among the neighborhoods used")

    a = pts[neighbors] - pts[:, None, :]
    b = rho.values[neighbors] - rho.values[:, None]
    ata = np.einsum("nki,nkj->nij", a, a)
    atb = np.einsum("nki,nk->ni", a, b)
    mean_d = np.linalg.norm(a, axis=2).mean(axis=1)
    lam = 1e-8 * mean_d ** 2
    lhs = ata + lam[:, None, None] * np.eye(3)
    g = np.linalg.solve(lhs, atb[..., None])[..., 0]

    w = np.linalg.eigvalsh(ata)
    rank_deficient = w[:, 0] <= 1e-10 * np.maximum(w[:, 2], 1e-30)
    return g, rank_deficient


def build_frame_field(cloud: PointCloud, rho: PointScalarField, k: int = 16,
                      normal_policy: str = "use-input",
                      index: Optional[NeighborIndex] = None) -> FrameField:
    """Assemble the frame field (u1, u2, n) from rho and the LPCA bases.

    normal_policy: "use-input" takes the cloud's normals (they must exist);
    "lpca-centroid-oriented" takes the LPCA normal estimate with its sign
    fixed to point away from the cloud centroid. u1 is the normalized
    tangent projection of the least-squares gradient; where its norm falls
    below 1e-6 (notably the distance seed) the point is singular and u1
    falls back to the LPCA principal direction. The rho minimizer is the
    seed and is always singular.
    """
    if normal_policy not in ("use-input", "lpca-centroid-oriented"):
        raise ArgumentError(f"unknown normal policy {normal_policy!r}")
    if index is None:
        index = NeighborIndex(cloud)
    t1, _, n_est, degenerate = lpca_basis(cloud, k, index=index)

    if normal_policy == "use-input":
        if cloud.normals is None:
            raise ArgumentError("normal_policy 'use-input' requires cloud normals")
        normals = cloud.normals.copy()
    else:
        centroid = cloud.points.mean(axis=0)
        outward = np.einsum("ni,ni->n", n_est, cloud.points - centroid)
        normals = np.where(outward[:, None] < 0.0, -n_est, n_est)

    g, _ = ls_gradient(cloud, rho, k, index=index)
    tang = g - np.einsum("ni,ni->n", g, normals)[:, None] * normals
    tnorm = np.linalg.norm(tang, axis=1)

    seed_index = int(np.argmin(rho.values))
    singular = (tnorm < SINGULAR_TOL) | degenerate
    singular[seed_index] = True

    u1 = np.where(singular[:, None], t1, tang / np.maximum(tnorm, 1e-300)[:, None])
    u2 = np.cross(u1, normals)
    u2n = np.linalg.norm(u2, axis=1)
    # A singular fallback u1 can be (anti)parallel to an input normal; any
    # deterministic perpendicular completes those frames.
    bad = u2n < 1e-12
    if np.any(bad):
        alt = np.cross(normals[bad], np.array([1.0, 0.0, 0.0]))
        alt_n = np.linalg.norm(alt, axis=1)
        retry = alt_n < 1e-12
        alt[retry] = np.cross(normals[bad][retry], np.array([0.0, 1.0, 0.0]))
        u1[bad] = alt / np.linalg.norm(alt, axis=1)[:, None]
        u2 = np.cross(u1, normals)
        u2n = np.linalg.norm(u2, axis=1)
    u2 /= u2n[:, None]
    u1 = u1 / np.linalg.norm(u1, axis=1)[:, None]

    return FrameField(u1=u1, u2=u2, n=normals, singular=singular,
                      seed_index=seed_index)

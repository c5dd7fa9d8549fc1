"""Point cloud loading, unit-cube normalization, exact k-NN, and PLY export.

Coordinates are float64 throughout. After :func:`normalize_to_unit_cube`
all points live in [0,1]^3 and ``source_transform`` records the map back
to the raw coordinates (raw = scale * p + offset).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ArgumentError, EmptyCloud, ParseError

# Extra neighbors fetched per k-NN query so that exact-distance ties at the
# cut rank can be re-sorted by lowest index (see NeighborIndex.k_nearest).
_TIE_SLACK = 8


@dataclass(frozen=True)
class PointCloud:
    """N points in R^3 with optional unit normals.

    ``source_transform = (scale, offset)`` maps normalized coordinates back
    to the raw input frame: ``raw = scale * p + offset``. Freshly loaded
    clouds carry the identity transform.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    source_transform: tuple = (1.0, (0.0, 0.0, 0.0))

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ArgumentError(f"points must be (N, 3), got {pts.shape}")
        if pts.shape[0] == 0:
            raise EmptyCloud("point cloud has no points")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64))
            if nrm.shape != pts.shape:
                raise ArgumentError(
                    f"normals shape {nrm.shape} does not match points {pts.shape}"
                )
            lengths = np.linalg.norm(nrm, axis=1)
            if np.any(np.abs(lengths - 1.0) > 1e-6):
                raise ArgumentError("normals must be unit length (tol 1e-6)")
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return self.points.shape[0]

    def to_source(self, p: np.ndarray) -> np.ndarray:
        """Map normalized coordinates back to the raw input frame."""
        scale, offset = self.source_transform
        return np.asarray(p, dtype=np.float64) * scale + np.asarray(offset, dtype=np.float64)


class NeighborIndex:
    """Exact k-nearest-neighbor index over a PointCloud.

    Wraps a scipy cKDTree; read-only after construction. Queries match
    brute-force distance sorting exactly, with distance ties broken by
    lowest point index.
    """

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    @property
    def n(self) -> int:
        return len(self.cloud)

    def k_nearest(self, query: np.ndarray, k: int) -> np.ndarray:
        """Indices of the k closest points, ascending distance, ties by index.

        ``query`` may be a single 3-vector or a (B, 3) batch; returns (k,)
        or (B, k) int64 indices accordingly.
        """
        n = self.n
        if k < 1 or k > n:
            raise ArgumentError(f"k must be in [1, {n}], got {k}")
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        if q.shape[1] != 3:
            raise ArgumentError(f"query must be 3-vectors, got shape {q.shape}")
        kq = min(k + _TIE_SLACK, n)
        _, idx = self._tree.query(q, k=kq, workers=1)
        idx = np.atleast_2d(idx)
        # Re-rank candidates with the same arithmetic the brute-force oracle
        # uses, so exact ties resolve identically (by lowest index).
        diff = self.cloud.points[idx] - q[:, None, :]
        d2 = np.einsum("bkd,bkd->bk", diff, diff)
        by_index = np.argsort(idx, axis=1)
        idx = np.take_along_axis(idx, by_index, axis=1)
        d2 = np.take_along_axis(d2, by_index, axis=1)
        by_dist = np.argsort(d2, axis=1, kind="stable")
        idx = np.take_along_axis(idx, by_dist, axis=1)[:, :k]
        if np.asarray(query).ndim == 1:
            return idx[0]
        return idx

    def nearest_distance(self, query: np.ndarray) -> np.ndarray:
        """Distance from each query to its nearest point (indices not needed)."""
        q = np.atleast_2d(np.asarray(query, dtype=np.float64))
        d, _ = self._tree.query(q, k=1, workers=1)
        return d if np.asarray(query).ndim > 1 else float(d[0])


def k_nearest(index: NeighborIndex, query: np.ndarray, k: int) -> np.ndarray:
    """Functional alias for :meth:`NeighborIndex.k_nearest`."""
    return index.k_nearest(query, k)


def load_cloud(path, fmt: Optional[str] = None) -> PointCloud:
    """Load a point cloud from xyz-text or ascii PLY.

    xyz-text: one point per line, "x y z" or "x y z nx ny nz",
    whitespace-separated; lines starting with '#' are comments. The format
    is inferred from the extension unless ``fmt`` ("xyz" or "ply") is given.
    """
    path = Path(path)
    if fmt is None:
        fmt = "ply" if path.suffix.lower() == ".ply" else "xyz"
    if fmt == "ply":
        return _load_ply_ascii(path)
    if fmt == "xyz":
        return _load_xyz_text(path)
    raise ArgumentError(f"unknown format {fmt!r} (expected 'xyz' or 'ply')")


def _load_xyz_text(path: Path) -> PointCloud:
    rows = []
    ncols = None
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) not in (3, 6):
                raise ParseError(
                    f"expected 3 or 6 numeric columns, got {len(parts)}",
                    path=str(path), line=lineno,
                )
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise ParseError("non-numeric value", path=str(path), line=lineno)
            if ncols is None:
                ncols = len(values)
            elif len(values) != ncols:
                raise ParseError(
                    f"inconsistent column count ({len(values)} vs {ncols})",
                    path=str(path), line=lineno,
                )
            rows.append(values)
    if not rows:
        raise EmptyCloud(f"no points in {path}")
    data = np.asarray(rows, dtype=np.float64)
    normals = data[:, 3:6] if data.shape[1] == 6 else None
    return PointCloud(points=data[:, :3], normals=normals)


def _load_ply_ascii(path: Path) -> PointCloud:
    with open(path, "r") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", path=str(path), line=1)
    n_vertex = None
    props = []
    header_end = None
    in_vertex_element = False
    for i, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError(f"unsupported PLY format {tok[1]!r}", path=str(path), line=i)
        elif tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if in_vertex_element:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex_element:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
    if header_end is None or n_vertex is None:
        raise ParseError("PLY header missing end_header or vertex element", path=str(path))
    if n_vertex == 0:
        raise EmptyCloud(f"no points in {path}")
    try:
        col = {name: j for j, name in enumerate(props)}
        ix, iy, iz = col["x"], col["y"], col["z"]
    except KeyError:
        raise ParseError("PLY vertex element lacks x/y/z properties", path=str(path))
    has_normals = all(name in col for name in ("nx", "ny", "nz"))
    pts = np.empty((n_vertex, 3), dtype=np.float64)
    nrm = np.empty((n_vertex, 3), dtype=np.float64) if has_normals else None
    for j in range(n_vertex):
        lineno = header_end + 1 + j
        if lineno > len(lines):
            raise ParseError("fewer vertex records than declared", path=str(path), line=lineno)
        parts = lines[lineno - 1].split()
        try:
            pts[j] = (float(parts[ix]), float(parts[iy]), float(parts[iz]))
            if has_normals:
                nrm[j] = (float(parts[col["nx"]]), float(parts[col["ny"]]), float(parts[col["nz"]]))
        except (ValueError, IndexError):
            raise ParseError("malformed vertex record", path=str(path), line=lineno)
    return PointCloud(points=pts, normals=nrm)


def normalize_to_unit_cube(cloud: PointCloud, margin: float = 0.05) -> PointCloud:
    """Isotropically scale + translate the cloud into [margin, 1-margin]^3.

    The bounding box is centered and the longest axis spans exactly
    1 - 2*margin; a single scale preserves angles so downstream frames are
    unaffected. A fully degenerate cloud (all points identical) is placed
    at the cube center with scale 1. ``source_transform`` records the
    inverse map.
    """
    if not (0.0 <= margin < 0.5):
        raise ArgumentError(f"margin must be in [0, 0.5), got {margin}")
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = float((hi - lo).max())
    if extent == 0.0:
        scale = 1.0
    else:
        scale = (1.0 - 2.0 * margin) / extent
    center_raw = (lo + hi) / 2.0
    normalized = (pts - center_raw) * scale + 0.5
    # raw = p / scale + (center_raw - 0.5 / scale)
    inv_scale = 1.0 / scale
    offset = center_raw - 0.5 * inv_scale
    return PointCloud(
        points=normalized,
        normals=cloud.normals,
        source_transform=(inv_scale, tuple(float(v) for v in offset)),
    )


def scalar_to_rgb(values: np.ndarray) -> np.ndarray:
    """Linear blue-to-red colormap over [min, max] of ``values``.

    t = (v - min) / (max - min) maps to (255*t, 0, 255*(1-t)); a constant
    field maps flat to the midpoint color.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    vmin, vmax = float(v.min()), float(v.max())
    t = np.full_like(v, 0.5) if vmax == vmin else (v - vmin) / (vmax - vmin)
    rgb = np.empty((v.size, 3), dtype=np.uint8)
    rgb[:, 0] = np.round(255.0 * t)
    rgb[:, 1] = 0
    rgb[:, 2] = np.round(255.0 * (1.0 - t))
    return rgb


def export_ply_with_scalars(cloud: PointCloud, scalars, path, comment: str = "") -> None:
    """Write an ascii PLY with per-vertex colors.

    ``scalars`` is either a per-point scalar array (mapped through
    :func:`scalar_to_rgb`) or an (N, 3) uint8 color array used verbatim.
    """
    arr = np.asarray(scalars)
    n = len(cloud)
    if arr.ndim == 2 and arr.shape == (n, 3):
        rgb = arr.astype(np.uint8)
    elif arr.ndim == 1 and arr.shape[0] == n:
        rgb = scalar_to_rgb(arr)
    else:
        raise ArgumentError(
            f"scalars must be ({n},) values or ({n}, 3) colors, got {arr.shape}"
        )
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        if comment:
            f.write(f"comment {comment}\n")
        f.write(f"element vertex {n}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for p, c in zip(cloud.points, rgb):
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {c[0]} {c[1]} {c[2]}\n")


def save_xyz_text(cloud: PointCloud, path, comment: str = "") -> None:
    """Write a cloud as xyz-text (with normals when present)."""
    with open(path, "w") as f:
        if comment:
            f.write(f"# {comment}\n")
        if cloud.normals is None:
            for p in cloud.points:
                f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        else:
            for p, nv in zip(cloud.points, cloud.normals):
                f.write(
                    f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g} "
                    f"{nv[0]:.17g} {nv[1]:.17g} {nv[2]:.17g}\n"
                )

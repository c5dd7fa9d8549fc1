"""The convolution operator: a per-point gather table of kernel taps.

Each output point lays a K x K grid of tap positions on its tangent plane
along (u1, u2) with spacing delta; every tap fetches the nearest input
point (lowest index on ties). Applying the operator contracts gathered
features against a K^2 x C_in x C_out weight tensor; the adjoint
scatter-adds back. Tables are built once per cloud and cached.

Cache file layout (little-endian):
  magic "NPTC" | version u32 | N u32 | n_out u32 | K u32 | delta f64
  | upstream sha256 (32 bytes) | taps row-major u32 (n_out * K^2 entries)
Output indices are not stored; they are recovered from the center column.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .errors import ArgumentError, CacheMissError, ParseError, ShapeError
from .frames import FrameField

_MAGIC = b"NPTC"
_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    """K taps per axis with spacing delta ("auto" scales by point spacing)."""

    k: int = 3
    delta: Union[float, str] = "auto"
    alpha: float = 1.0

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ArgumentError(f"K must be odd and positive, got {self.k}")
        if isinstance(self.delta, str):
            if self.delta != "auto":
                raise ArgumentError(f"delta must be a number or 'auto', got {self.delta!r}")
            if self.alpha <= 0:
                raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        elif self.delta <= 0:
            raise ArgumentError(f"delta must be positive, got {self.delta}")


@dataclass(frozen=True)
class NPTCOperator:
    """Gather table: taps[i, p*K+q] is the input index feeding tap (p, q)."""

    taps: np.ndarray
    out_indices: np.ndarray
    n_input: int
    k: int
    delta: float
    tag: str = ""

    @property
    def n_out(self) -> int:
        return self.taps.shape[0]

    @property
    def center_column(self) -> int:
        return (self.k * self.k - 1) // 2


def mean_kth_neighbor_distance(cloud: PointCloud, index: NeighborIndex,
                               kth: int = 8) -> float:
    """Mean distance to the kth nearest neighbor (self excluded)."""
    d, _ = index._tree.query(cloud.points, k=kth + 1, workers=1)
    return float(d[:, kth].mean())


def resolve_delta(spec: KernelSpec, cloud: PointCloud, index: NeighborIndex) -> float:
    if isinstance(spec.delta, str):
        return spec.alpha * mean_kth_neighbor_distance(cloud, index)
    return float(spec.delta)


def build_operator(in_cloud: PointCloud, in_index: NeighborIndex,
                   frames: FrameField, out_indices, spec: KernelSpec,
                   tag: str = "") -> NPTCOperator:
    """Precompute the tap table for the given output subset.

    Tap (p, q) of output point x sits at x + (p-c)*delta*u1 + (q-c)*delta*u2
    with c = (K-1)/2 and is sourced from the nearest input point; positions
    beyond the cloud's support therefore clamp to the closest existing
    point, and duplicated sources are permitted. The center tap is the
    output point itself.
    """
    if len(frames) != len(in_cloud):
        raise ArgumentError("frame field does not match the input cloud")
    out = np.asarray(out_indices, dtype=np.int64).ravel()
    if out.size == 0:
        raise ArgumentError("out_indices is empty")
    if np.any(out < 0) or np.any(out >= len(in_cloud)):
        raise ArgumentError("out_indices outside the input cloud")

    k = spec.k
    delta = resolve_delta(spec, in_cloud, in_index)
    c = (k - 1) // 2
    p, q = np.meshgrid(np.arange(k), np.arange(k), indexing="ij")
    du = (p.ravel() - c) * delta  # row-major over (p, q)
    dv = (q.ravel() - c) * delta

    x = in_cloud.points[out]
    u1 = frames.u1[out]
    u2 = frames.u2[out]
    positions = (x[:, None, :]
                 + du[None, :, None] * u1[:, None, :]
                 + dv[None, :, None] * u2[:, None, :])
    taps = in_index.k_nearest(positions.reshape(-1, 3), 1).reshape(out.size, k * k)
    taps[:, (k * k - 1) // 2] = out
    return NPTCOperator(taps=taps, out_indices=out, n_input=len(in_cloud),
                        k=k, delta=delta, tag=tag)


def apply(op: NPTCOperator, weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    """out[i, co] = sum_pq sum_ci weights[pq, ci, co] * features[taps[i, pq], ci]."""
    weights = np.asarray(weights)
    features = np.asarray(features)
    _check_shapes(op, weights, features)
    gathered = features[op.taps]
    return np.einsum("ipc,pcd->id", gathered, weights)


def apply_adjoint(op: NPTCOperator, weights: np.ndarray, features: np.ndarray,
                  out_grad: np.ndarray):
    """Exact adjoint of :func:`apply` in both arguments.

    Returns (features_grad, weights_grad). The scatter-add over taps runs
    in a fixed sequential order, so results are reproducible.
    """
    weights = np.asarray(weights)
    features = np.asarray(features)
    out_grad = np.asarray(out_grad)
    _check_shapes(op, weights, features)
    if out_grad.shape != (op.n_out, weights.shape[2]):
        raise ShapeError(
            f"out_grad shape {out_grad.shape} != ({op.n_out}, {weights.shape[2]})"
        )
    gathered = features[op.taps]
    weights_grad = np.einsum("ipc,id->pcd", gathered, out_grad)
    scatter = np.einsum("pcd,id->ipc", weights, out_grad)
    features_grad = np.zeros_like(features)
    np.add.at(features_grad, op.taps.ravel(),
              scatter.reshape(-1, features.shape[1]))
    return features_grad, weights_grad


def _check_shapes(op: NPTCOperator, weights: np.ndarray, features: np.ndarray):
    kk = op.k * op.k
    if weights.ndim != 3 or weights.shape[0] != kk:
        raise ShapeError(f"weights must be ({kk}, C_in, C_out), got {weights.shape}")
    if features.ndim != 2 or features.shape[0] != op.n_input:
        raise ShapeError(
            f"features must be ({op.n_input}, C_in), got {features.shape}"
        )
    if features.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"channel mismatch: features C_in={features.shape[1]}, "
            f"weights C_in={weights.shape[1]}"
        )


def save_operator(op: NPTCOperator, path, upstream_hash: bytes = b"\0" * 32) -> None:
    """Write the documented little-endian cache file."""
    if len(upstream_hash) != 32:
        raise ArgumentError("upstream_hash must be 32 bytes (sha256)")
    header = _MAGIC + struct.pack("<IIII d", _VERSION, op.n_input, op.n_out,
                                  op.k, op.delta) + bytes(upstream_hash)
    with open(path, "wb") as f:
        f.write(header)
        f.write(op.taps.astype("<u4").tobytes(order="C"))


def load_operator(path, expect_hash: bytes = None) -> NPTCOperator:
    """Read a cache file; verifies the embedded upstream hash when given."""
    with open(path, "rb") as f:
        blob = f.read()
    head = struct.calcsize("<IIII d")
    if blob[:4] != _MAGIC:
        raise ParseError("bad operator cache magic", path=str(path))
    version, n, n_out, k, delta = struct.unpack("<IIII d", blob[4:4 + head])
    if version != _VERSION:
        raise ParseError(f"unsupported operator cache version {version}", path=str(path))
    stored_hash = blob[4 + head:4 + head + 32]
    if expect_hash is not None and stored_hash != expect_hash:
        raise CacheMissError("stale operator cache (upstream hash mismatch)",
                             path=str(path))
    body = blob[4 + head + 32:]
    expected = n_out * k * k * 4
    if len(body) != expected:
        raise ParseError(
            f"operator cache body has {len(body)} bytes, expected {expected}",
            path=str(path),
        )
    taps = np.frombuffer(body, dtype="<u4").astype(np.int64).reshape(n_out, k * k)
    out_indices = taps[:, (k * k - 1) // 2].copy()
    return NPTCOperator(taps=taps, out_indices=out_indices, n_input=int(n),
                        k=int(k), delta=float(delta), tag=str(path))

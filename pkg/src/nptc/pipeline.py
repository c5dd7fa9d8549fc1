"""End-to-end per-cloud preprocessing: narrow band, distance field, frames,
hierarchy, and the tap tables the network consumes.

This is the one-time phase; training never rebuilds tables. Defaults:
M = 100, epsilon = 2h, seed policy min:z, k = 16 neighbors, K = 3 taps,
delta auto per hierarchy level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cloud import NeighborIndex, PointCloud
from .eikonal import fast_marching, interpolate_to_points, select_seed
from .errors import ArgumentError
from .frames import FrameField, build_frame_field
from .hierarchy import build_hierarchy
from .narrowband import voxelize_narrowband
from .network import CloudBundle
from .operator import KernelSpec, build_operator


@dataclass(frozen=True)
class PipelineConfig:
    resolution: int = 100
    epsilon: Optional[float] = None  # None = density-adaptive (see auto_epsilon)
    seed_policy: str = "min:z"
    neighbors: int = 16
    normal_policy: str = "use-input"
    kernel_k: int = 3
    delta_alpha: float = 1.0
    ratios: Sequence[float] = (1.0, 0.25, 0.0625)
    fps_start: int = 0


def auto_epsilon(cloud: PointCloud, resolution: int,
                 index: Optional[NeighborIndex] = None) -> float:
    """Band half-width that stays connected at the cloud's sampling density.

    2h suffices when points are spaced below ~2h (the narrow-band default),
    but blobs of radius eps around points only merge when eps exceeds half
    the local gaps; sparser clouds therefore scale eps with a high quantile
    of the 8th-neighbor distance.
    """
    if index is None:
        index = NeighborIndex(cloud)
    h = 1.0 / resolution
    k = min(9, len(cloud))
    d, _ = index._tree.query(cloud.points, k=k, workers=1)
    d8 = float(np.quantile(d[:, k - 1], 0.9))
    return max(2.0 * h, 0.75 * d8)


@dataclass
class CloudArtifacts:
    """Everything the pipeline derives from one cloud."""

    cloud: PointCloud
    band: object
    rho_grid: object
    rho: object
    frames: FrameField
    bundle: CloudBundle


def compute_frames(cloud: PointCloud, cfg: PipelineConfig,
                   index: Optional[NeighborIndex] = None):
    """Narrow band + distance field + frame field for one normalized cloud."""
    if index is None:
        index = NeighborIndex(cloud)
    epsilon = cfg.epsilon if cfg.epsilon is not None else auto_epsilon(
        cloud, cfg.resolution, index)
    band = voxelize_narrowband(cloud, cfg.resolution, epsilon, index=index)
    seeds = select_seed(cloud, band, cfg.seed_policy)
    rho_grid = fast_marching(band, seeds)
    rho = interpolate_to_points(rho_grid, band, cloud)
    policy = cfg.normal_policy
    if policy == "use-input" and cloud.normals is None:
        policy = "lpca-centroid-oriented"
    frames = build_frame_field(cloud, rho, cfg.neighbors, policy, index=index)
    return band, rho_grid, rho, frames


def build_cloud_bundle(cloud: PointCloud, cfg: PipelineConfig = PipelineConfig(),
                       label: int = -1, part_labels=None) -> CloudArtifacts:
    """Run the full preprocessing chain and assemble the network bundle.

    Strided operators map level i-1 onto level i; residual operators map
    each level i >= 1 onto itself. Tap spacing is auto-resolved per level
    from that level's own point spacing.
    """
    index = NeighborIndex(cloud)
    band, rho_grid, rho, frames = compute_frames(cloud, cfg, index=index)
    hierarchy = build_hierarchy(cloud, cfg.ratios, cfg.fps_start)

    down_ops = []
    res_ops = []
    for level in range(1, hierarchy.n_levels):
        fine = hierarchy.levels[level - 1]
        coarse = hierarchy.levels[level]
        sub_cloud = PointCloud(points=cloud.points[fine])
        sub_index = NeighborIndex(sub_cloud)
        sub_frames = FrameField(
            u1=frames.u1[fine], u2=frames.u2[fine], n=frames.n[fine],
            singular=frames.singular[fine], seed_index=0,
        )
        # positions of the coarse points within the fine list; nestedness
        # guarantees every coarse point appears there
        pos = {int(v): i for i, v in enumerate(fine)}
        out_pos = np.array([pos[int(v)] for v in coarse], dtype=np.int64)
        spec = KernelSpec(k=cfg.kernel_k, delta="auto", alpha=cfg.delta_alpha)
        down_ops.append(build_operator(sub_cloud, sub_index, sub_frames, out_pos,
                                       spec, tag=f"down{level}"))

        coarse_cloud = PointCloud(points=cloud.points[coarse])
        coarse_index = NeighborIndex(coarse_cloud)
        coarse_frames = FrameField(
            u1=frames.u1[coarse], u2=frames.u2[coarse], n=frames.n[coarse],
            singular=frames.singular[coarse], seed_index=0,
        )
        res_ops.append(build_operator(
            coarse_cloud, coarse_index, coarse_frames,
            np.arange(coarse.size), spec, tag=f"res{level}"))

    bundle = CloudBundle(points=cloud.points, hierarchy=hierarchy,
                         down_ops=down_ops, res_ops=res_ops,
                         label=label, part_labels=part_labels)
    if part_labels is not None and len(part_labels) != len(cloud):
        raise ArgumentError("part_labels length does not match the cloud")
    return CloudArtifacts(cloud=cloud, band=band, rho_grid=rho_grid, rho=rho,
                          frames=frames, bundle=bundle)

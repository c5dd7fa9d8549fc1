"""The transported kernel axes on a sphere.

Computes the frame field (u1, u2, n): u1 is the tangent projection of the
distance gradient, so on a sphere seeded at the south pole it should line
up with the meridians. Exports u1 as an RGB-encoded PLY for inspection.
"""

import numpy as np

import nptc

n, radius = 4096, 0.35
i = np.arange(n)
golden = np.pi * (3.0 - np.sqrt(5.0))
z = 1.0 - (2.0 * i + 1.0) / n
r = np.sqrt(1.0 - z * z)
dirs = np.stack([r * np.cos(golden * i), r * np.sin(golden * i), z], axis=1)
cloud = nptc.PointCloud(points=0.5 + radius * dirs, normals=dirs)

band = nptc.voxelize_narrowband(cloud, 100, 0.02)
seeds = nptc.select_seed(cloud, band, "min:z")
rho = nptc.interpolate_to_points(nptc.fast_marching(band, seeds), band, cloud)
frames = nptc.build_frame_field(cloud, rho, k=16, normal_policy="use-input")
print(f"frames: {frames.n_singular} singular of {len(frames)} "
      f"(the seed itself is always one)")

# how well does u1 follow the meridians?
seed_point = cloud.points[frames.seed_index]
s = (seed_point - 0.5) / radius
p = (cloud.points - 0.5) / radius
t = np.clip(p @ s, -1, 1)
geo = radius * np.arccos(t)
meridian = (t[:, None] * p - s) / np.sqrt(np.maximum(1 - t**2, 1e-300))[:, None]
away = (geo > 0.2) & (geo < np.pi * radius - 0.2) & ~frames.singular
angles = np.degrees(np.arccos(np.clip(
    np.einsum("ni,ni->n", frames.u1[away], meridian[away]), -1, 1)))
print(f"u1 vs analytic meridian (away from the poles): "
      f"median {np.median(angles):.2f} deg, within 10 deg: {np.mean(angles <= 10):.1%}")

# orthonormality comes out at machine precision
ok = ~frames.singular
print("max |<u1, n>| over non-singular frames:",
      np.abs(np.einsum("ni,ni->n", frames.u1[ok], frames.n[ok])).max())

colors = np.clip((frames.u1 * 0.5 + 0.5) * 255, 0, 255).astype(np.uint8)
nptc.export_ply_with_scalars(cloud, colors, "sphere_u1.ply")
print("wrote sphere_u1.ply (u1 direction encoded as RGB)")

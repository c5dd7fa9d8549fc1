"""On a planar grid the operator IS ordinary 2-D convolution.

Seeding the distance field along one edge of a grid-sampled plane makes
the gradient constant, so every tangent frame is the global plane basis
and the gather taps land exactly on the grid neighbors. The operator
output then matches a dense 2-D convolution bit-for-bit on interior
points, for any weights.
"""

import numpy as np

import nptc
from nptc.operator import KernelSpec, apply, build_operator

n = 32
axis = np.linspace(0.0, 1.0, n)
gx, gy = np.meshgrid(axis, axis, indexing="ij")
pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, 0.5)])
cloud = nptc.PointCloud(points=pts, normals=np.tile([0.0, 0.0, 1.0], (n * n, 1)))
spacing = 1.0 / (n - 1)

band = nptc.voxelize_narrowband(cloud, 32, 2 / 32)
seeds = nptc.select_seed(cloud, band, "face:x:low")   # a whole edge, not a point
rho = nptc.interpolate_to_points(nptc.fast_marching(band, seeds), band, cloud)
frames = nptc.build_frame_field(cloud, rho, 16, "use-input")

interior_frame = frames.frame(5 * n + 5)
print("u1 at an interior point:", np.round(interior_frame.u1, 6), "(should be e_x)")
print("u2 at an interior point:", np.round(interior_frame.u2, 6), "(should be -e_y)")

op = build_operator(cloud, nptc.NeighborIndex(cloud), frames,
                    np.arange(len(cloud)), KernelSpec(k=3, delta=spacing))

rng = np.random.default_rng(0)
feats = rng.standard_normal((len(cloud), 3))
weights = rng.standard_normal((9, 3, 4))
got = apply(op, weights, feats).reshape(n, n, 4)

# dense 2-D convolution, computed directly on the feature grid
grid = feats.reshape(n, n, 3)
dense = np.zeros((n, n, 4))
ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
for t, (p, q) in enumerate((p, q) for p in range(3) for q in range(3)):
    sx = np.clip(ix + (p - 1), 0, n - 1)
    sy = np.clip(iy - (q - 1), 0, n - 1)
    dense += np.einsum("xyc,cd->xyd", grid[sx, sy], weights[t])

interior = np.zeros((n, n), dtype=bool)
interior[1:-1, 1:-1] = True
diff = np.abs(got[interior] - dense[interior]).max()
print(f"max |operator - dense conv| on interior points: {diff:.2e}")

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import nptc
from helpers import fibonacci_sphere


@pytest.fixture(scope="session")
def sphere_setup():
    """The sphere scenario shared by the eikonal/frames tests and the
    acceptance suite: 4096 points, R = 0.35, M = 100, eps = 2h, min-z seed."""
    pts, dirs = fibonacci_sphere(4096, 0.35)
    cloud = nptc.PointCloud(points=pts, normals=dirs)
    band = nptc.voxelize_narrowband(cloud, 100, 0.02)
    seeds = nptc.select_seed(cloud, band, "min:z")
    grid_field = nptc.fast_marching(band, seeds)
    rho = nptc.interpolate_to_points(grid_field, band, cloud)
    frames = nptc.build_frame_field(cloud, rho, 16, "use-input")
    seed_index = int(np.argmin(pts[:, 2]))
    return {
        "cloud": cloud, "band": band, "seeds": seeds, "grid_field": grid_field,
        "rho": rho, "frames": frames, "seed_index": seed_index,
        "radius": 0.35, "center": np.array([0.5, 0.5, 0.5]),
    }


def sphere_geodesics(setup):
    """Analytic geodesic distances and meridian directions from the seed."""
    pts = setup["cloud"].points
    radius = setup["radius"]
    center = setup["center"]
    x0 = pts[setup["seed_index"]]
    s = (x0 - center) / radius
    p = (pts - center) / radius
    t = np.clip(p @ s, -1.0, 1.0)
    geo = radius * np.arccos(t)
    denom = np.sqrt(np.maximum(1.0 - t ** 2, 1e-300))
    meridian = (t[:, None] * p - s) / denom[:, None]
    return geo, meridian

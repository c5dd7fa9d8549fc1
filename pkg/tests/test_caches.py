import numpy as np
import pytest

import nptc
from nptc import caches
from nptc.pipeline import PipelineConfig, compute_frames
from helpers import fibonacci_sphere


@pytest.fixture(scope="module")
def small_chain(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("chain")
    pts, dirs = fibonacci_sphere(512, 0.3)
    cloud = nptc.PointCloud(points=pts, normals=dirs)
    cloud_path = tmp / "cloud.xyz"
    nptc.save_xyz_text(cloud, cloud_path)
    cloud_hash = caches.file_sha256(cloud_path)
    band, grid_field, rho, frames = compute_frames(
        cloud, PipelineConfig(resolution=40, neighbors=12))
    return dict(tmp=tmp, cloud=cloud, cloud_path=cloud_path,
                cloud_hash=cloud_hash, band=band, grid_field=grid_field,
                rho=rho, frames=frames)


class TestBandCache:
    def test_round_trip(self, small_chain):
        c = small_chain
        path = c["tmp"] / "band.nb"
        caches.save_band(c["band"], path, upstream=c["cloud_hash"])
        back = caches.load_band(path, upstream=c["cloud_hash"])
        np.testing.assert_array_equal(back.active, c["band"].active)
        np.testing.assert_allclose(back.dist_to_cloud, c["band"].dist_to_cloud)
        assert back.epsilon == c["band"].epsilon
        np.testing.assert_array_equal(
            np.sort(back.occupied_rows), np.sort(c["band"].occupied_rows))

    def test_stale_hash_raises(self, small_chain):
        c = small_chain
        path = c["tmp"] / "band2.nb"
        caches.save_band(c["band"], path, upstream=c["cloud_hash"])
        with pytest.raises(nptc.CacheMissError):
            caches.load_band(path, upstream=b"\x00" * 32)

    def test_missing_file_is_cache_miss(self, small_chain):
        with pytest.raises(nptc.CacheMissError):
            caches.load_band(small_chain["tmp"] / "nope.nb")

    def test_wrong_kind_rejected(self, small_chain):
        c = small_chain
        path = c["tmp"] / "frames_as_band.npz"
        caches.save_frames(c["frames"], path)
        with pytest.raises(nptc.ParseError):
            caches.load_band(path)


class TestDistanceAndFrames:
    def test_distance_round_trip_with_root(self, small_chain):
        c = small_chain
        path = c["tmp"] / "rho.gsf"
        caches.save_distance(c["grid_field"], c["rho"], path,
                             upstream=b"\x01" * 32, root=c["cloud_hash"],
                             seed_provenance="min-coordinate(z)")
        grid_field, rho = caches.load_distance(path, upstream=b"\x01" * 32,
                                               root=c["cloud_hash"])
        np.testing.assert_allclose(grid_field.values, c["grid_field"].values)
        np.testing.assert_array_equal(grid_field.state, c["grid_field"].state)
        np.testing.assert_allclose(rho.values, c["rho"].values)

    def test_root_mismatch(self, small_chain):
        c = small_chain
        path = c["tmp"] / "rho2.gsf"
        caches.save_distance(c["grid_field"], c["rho"], path,
                             upstream=b"\x01" * 32, root=c["cloud_hash"])
        with pytest.raises(nptc.CacheMissError):
            caches.load_distance(path, root=b"\xff" * 32)

    def test_frames_round_trip(self, small_chain):
        c = small_chain
        path = c["tmp"] / "frames.npz"
        caches.save_frames(c["frames"], path, upstream=b"\x02" * 32,
                           root=c["cloud_hash"])
        back = caches.load_frames(path, root=c["cloud_hash"])
        np.testing.assert_array_equal(back.u1, c["frames"].u1)
        np.testing.assert_array_equal(back.singular, c["frames"].singular)
        assert back.seed_index == c["frames"].seed_index


class TestHierarchyCache:
    def test_round_trip(self, small_chain, tmp_path):
        c = small_chain
        h = nptc.build_hierarchy(c["cloud"], [1, 0.25, 0.0625])
        path = tmp_path / "h.npz"
        caches.save_hierarchy(h, path, upstream=c["cloud_hash"])
        back = caches.load_hierarchy(path, upstream=c["cloud_hash"])
        assert back.n_levels == h.n_levels
        for a, b in zip(h.levels, back.levels):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(h.nearest_coarse, back.nearest_coarse):
            np.testing.assert_array_equal(a, b)

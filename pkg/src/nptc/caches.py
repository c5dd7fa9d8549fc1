"""Stage artifacts for the command-line pipeline.

Band, distance-field, frame-field, and hierarchy artifacts are npz files
with a JSON meta entry; the meta embeds a sha256 of the upstream input
file(s) so downstream stages can refuse stale caches. Operator caches and
checkpoints use their own documented binary formats (operator.py,
training.py); this module wires the same hash discipline around them.
"""

from __future__ import annotations

import hashlib
import json
import numpy as np

from .eikonal import GridScalarField, PointScalarField
from .errors import CacheMissError, ParseError
from .frames import FrameField
from .hierarchy import PointHierarchy
from .narrowband import NarrowBand, band_from_voxels


def file_sha256(path) -> bytes:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.digest()


def combined_hash(*paths) -> bytes:
    digest = hashlib.sha256()
    for p in paths:
        digest.update(file_sha256(p))
    return digest.digest()


def _check_upstream(meta: dict, path, upstream: bytes, root: bytes = None):
    if upstream is not None:
        stored = bytes.fromhex(meta.get("upstream_sha256", ""))
        if stored != upstream:
            raise CacheMissError("stale cache (upstream hash mismatch)", path=str(path))
    if root is not None:
        stored = bytes.fromhex(meta.get("root_sha256", ""))
        if stored != root:
            raise CacheMissError("stale cache (root cloud hash mismatch)", path=str(path))


def root_of(path) -> bytes:
    """The root cloud hash an artifact was derived from."""
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    return bytes.fromhex(meta.get("root_sha256", ""))


def _load_npz(path, kind: str):
    try:
        data = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise CacheMissError(f"missing {kind} cache", path=str(path))
    except Exception as exc:
        raise ParseError(f"unreadable {kind} cache: {exc}", path=str(path))
    meta = json.loads(str(data["meta"]))
    if meta.get("kind") != kind:
        raise ParseError(f"cache is a {meta.get('kind')!r}, expected {kind!r}",
                         path=str(path))
    return data, meta


def _save_npz(path, kind: str, meta: dict, upstream: bytes, root: bytes = b"",
              **arrays):
    meta = dict(meta)
    meta["kind"] = kind
    meta["upstream_sha256"] = (upstream or b"").hex()
    meta["root_sha256"] = (root or upstream or b"").hex()
    # a file handle keeps numpy from appending .npz to foreign suffixes
    with open(path, "wb") as f:
        np.savez_compressed(f, meta=np.str_(json.dumps(meta)), **arrays)


# -- band -------------------------------------------------------------------

def save_band(band: NarrowBand, path, upstream: bytes = b"") -> None:
    # the band is the chain root's first derivative: root = upstream = cloud
    _save_npz(path, "band",
              {"resolution": band.grid.resolution, "epsilon": band.epsilon},
              upstream,
              active=band.active.astype(np.int32),
              dist=band.dist_to_cloud,
              occupied=band.active[band.occupied_rows].astype(np.int32))


def load_band(path, upstream: bytes = None) -> NarrowBand:
    data, meta = _load_npz(path, "band")
    _check_upstream(meta, path, upstream)
    return band_from_voxels(int(meta["resolution"]), data["active"],
                            float(meta["epsilon"]), dist_to_cloud=data["dist"],
                            occupied_ijk=data["occupied"])


# -- distance field ---------------------------------------------------------

def save_distance(grid_field: GridScalarField, rho: PointScalarField, path,
                  upstream: bytes = b"", root: bytes = b"",
                  seed_provenance: str = "") -> None:
    _save_npz(path, "distance", {"seed": seed_provenance}, upstream, root,
              values=grid_field.values, state=grid_field.state,
              accept_rank=grid_field.accept_rank, seed_rows=grid_field.seed_rows,
              point_values=rho.values, out_of_band=rho.out_of_band)


def load_distance(path, upstream: bytes = None, root: bytes = None):
    data, meta = _load_npz(path, "distance")
    _check_upstream(meta, path, upstream, root)
    grid_field = GridScalarField(values=data["values"], state=data["state"],
                                 accept_rank=data["accept_rank"],
                                 seed_rows=data["seed_rows"])
    rho = PointScalarField(values=data["point_values"],
                           out_of_band=data["out_of_band"])
    return grid_field, rho


# -- frames -----------------------------------------------------------------

def save_frames(frames: FrameField, path, upstream: bytes = b"",
                root: bytes = b"") -> None:
    _save_npz(path, "frames", {"seed_index": frames.seed_index}, upstream, root,
              u1=frames.u1, u2=frames.u2, n=frames.n, singular=frames.singular)


def load_frames(path, upstream: bytes = None, root: bytes = None) -> FrameField:
    data, meta = _load_npz(path, "frames")
    _check_upstream(meta, path, upstream, root)
    return FrameField(u1=data["u1"], u2=data["u2"], n=data["n"],
                      singular=data["singular"], seed_index=int(meta["seed_index"]))


# -- hierarchy --------------------------------------------------------------

def save_hierarchy(hierarchy: PointHierarchy, path, upstream: bytes = b"") -> None:
    arrays = {}
    for i, level in enumerate(hierarchy.levels):
        arrays[f"level_{i}"] = level
    for i, nc in enumerate(hierarchy.nearest_coarse):
        arrays[f"coarse_{i}"] = nc
    _save_npz(path, "hierarchy", {"n_levels": hierarchy.n_levels}, upstream, **arrays)


def load_hierarchy(path, upstream: bytes = None) -> PointHierarchy:
    data, meta = _load_npz(path, "hierarchy")
    _check_upstream(meta, path, upstream)
    n = int(meta["n_levels"])
    levels = [data[f"level_{i}"] for i in range(n)]
    coarse = [data[f"coarse_{i}"] for i in range(n - 1)]
    return PointHierarchy(levels=levels, nearest_coarse=coarse)

"""Command-line surface for the pipeline.

Each stage reads and writes the documented cache formats and embeds a
sha256 of its upstream inputs; downstream stages refuse stale caches.
Exit code 0 on success; on failure one machine-parsable line
"<Category>: <message>" (Category in {ParseError, ConfigError, CacheMiss,
Error}) goes to stderr and the exit code is 1.

A JSON document passed via --config overrides the equivalent flags;
unknown keys are rejected. NPTC_CACHE_DIR sets the default cache root for
train/eval. --threads caps worker parallelism (the implementation is
single-threaded, so any value >= 1 is already satisfied).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import caches
from .cloud import (NeighborIndex, export_ply_with_scalars, load_cloud,
                    normalize_to_unit_cube)
from .eikonal import fast_marching, interpolate_to_points, select_seed
from .errors import (ArgumentError, CacheMissError, ConfigError, EmptyCloud,
                     NPTCError, ParseError, ShapeError)
from .frames import build_frame_field
from .hierarchy import farthest_point_sampling
from .narrowband import save_band_text, voxelize_narrowband
from .network import NetworkConfig, NPTCNet, grad_check
from .operator import (KernelSpec, apply as op_apply, build_operator,
                       load_operator, save_operator)
from .pipeline import PipelineConfig, build_cloud_bundle
from .synthetic import DatasetSpec, make_dataset, write_dataset
from .training import (AugmentConfig, TrainConfig, TrainingSet, evaluate,
                       load_checkpoint, predict_with_voting, save_checkpoint,
                       train as train_model, write_metrics_csv)

_PIPELINE_KEYS = {"resolution", "epsilon", "seed_policy", "neighbors",
                  "normal_policy", "kernel_k", "delta_alpha", "ratios",
                  "fps_start"}
_NETWORK_KEYS = {"task", "widths", "head_hidden", "decode_widths",
                 "residual_blocks", "model_seed"}
_TRAIN_KEYS = {"optimizer", "lr", "momentum", "betas", "eps", "epochs",
               "batch_size", "seed", "voting_rounds", "augment"}
_AUGMENT_KEYS = {"rotation", "scale_range", "jitter_sigma"}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_overrides(parser, args)
        return args.handler(args)
    except CacheMissError as exc:
        print(f"CacheMiss: {exc}", file=sys.stderr)
    except ParseError as exc:
        print(f"ParseError: {exc}", file=sys.stderr)
    except EmptyCloud as exc:
        print(f"ParseError: {exc}", file=sys.stderr)
    except (ConfigError, ArgumentError, ShapeError) as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
    except NPTCError as exc:
        print(f"Error: {exc}", file=sys.stderr)
    return 1


def _build_parser():
    parser = argparse.ArgumentParser(prog="nptc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="JSON file whose keys override these flags")
        p.add_argument("--threads", type=int, default=1,
                       help="parallelism cap (implementation is single-threaded)")

    p = sub.add_parser("voxelize", help="build the narrow-band cache of a cloud")
    p.add_argument("--in", dest="cloud", required=True)
    p.add_argument("--res", type=int, default=100)
    p.add_argument("--eps", default="auto", help="band half-width; auto = 2/res")
    p.add_argument("--normalize", action="store_true",
                   help="normalize the cloud into the unit cube first")
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--text-out", default=None, help="also dump 'i j k dist' text")
    common(p)
    p.set_defaults(handler=_cmd_voxelize)

    p = sub.add_parser("distance", help="fast-march the distance field on a band")
    p.add_argument("--cloud", required=True)
    p.add_argument("--band", required=True)
    p.add_argument("--seed-policy", default="min:z", help="min:<axis> or index:<i>")
    p.add_argument("--seed-face", default=None, help="<axis>:<low|high> face seed")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_distance)

    p = sub.add_parser("frames", help="tangent frames from a distance field")
    p.add_argument("--cloud", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--normals", choices=["input", "lpca"], default="input")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_frames)

    p = sub.add_parser("op-build", help="precompute a tap-table operator")
    p.add_argument("--cloud", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--k-taps", type=int, default=3)
    p.add_argument("--delta", default="auto")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--out-points", default="all", help="all or fps:<n>")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_op_build)

    p = sub.add_parser("conv", help="apply an operator cache to features")
    p.add_argument("--op", required=True)
    p.add_argument("--features", required=True, help="npz with a 'features' array")
    p.add_argument("--weights", required=True, help="npz with a 'weights' array")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_conv)

    p = sub.add_parser("fps", help="farthest point sampling indices")
    p.add_argument("--in", dest="cloud", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_fps)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--families", default="sphere,torus,cube-surface")
    p.add_argument("--clouds-per-family", type=int, default=100)
    p.add_argument("--points", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    common(p)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("train", help="train the network on a dataset directory")
    p.add_argument("--data", required=True, help="directory with manifest.json")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--cache-dir", default=None,
                   help="per-cloud cache root (default $NPTC_CACHE_DIR or <data>/cache)")
    p.add_argument("--precompute", action="store_true",
                   help="build missing per-cloud caches instead of failing")
    common(p)
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (optionally with voting)")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="metrics csv path")
    p.add_argument("--voting", type=int, default=1)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--precompute", action="store_true")
    common(p)
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("export-ply", help="cloud + scalar field to colored PLY")
    p.add_argument("--cloud", required=True)
    p.add_argument("--field", default=None, help="distance artifact to color by")
    p.add_argument("--u1-from", default=None,
                   help="frames artifact; encode the u1 axis as RGB instead")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(handler=_cmd_export_ply)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seeds", type=int, default=5)
    common(p)
    p.set_defaults(handler=_cmd_gradcheck)
    return parser


def _apply_config_overrides(parser, args):
    """JSON config overrides flags; unknown keys are rejected."""
    if getattr(args, "config", None) is None:
        return
    try:
        with open(args.config) as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise CacheMissError("config file not found", path=args.config)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON: {exc}", path=args.config)
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object [{args.config}]")
    known = set(vars(args))
    nested = {"pipeline": _PIPELINE_KEYS, "network": _NETWORK_KEYS,
              "train": _TRAIN_KEYS}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest in nested:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {key!r} must be an object")
            unknown = set(value) - nested[dest]
            if unknown:
                raise ConfigError(f"unknown {key} config keys: {sorted(unknown)}")
            if dest == "train" and "augment" in value:
                bad = set(value["augment"]) - _AUGMENT_KEYS
                if bad:
                    raise ConfigError(f"unknown augment config keys: {sorted(bad)}")
            setattr(args, dest, value)
        elif dest in known:
            setattr(args, dest, value)
        else:
            raise ConfigError(f"unknown config key {key!r} [{args.config}]")


def _resolved_config_path(out_path) -> Path:
    out_path = Path(out_path)
    if out_path.suffix:
        return out_path.with_suffix(out_path.suffix + ".run.json")
    return out_path / "run.json"


def _log_resolved(args, out_path, extra=None) -> None:
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("handler", "config") and not k.startswith("_")}
    if extra:
        resolved.update(extra)
    path = _resolved_config_path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(resolved, f, indent=1, default=str)


# -- stage handlers ----------------------------------------------------------

def _cmd_voxelize(args) -> int:
    cloud = load_cloud(args.cloud)
    if args.normalize:
        cloud = normalize_to_unit_cube(cloud, args.margin)
    res = args.res
    eps = 2.0 / res if args.eps == "auto" else float(args.eps)
    band = voxelize_narrowband(cloud, res, eps)
    caches.save_band(band, args.out, upstream=caches.file_sha256(args.cloud))
    if args.text_out:
        save_band_text(band, args.text_out)
    _log_resolved(args, args.out, {"epsilon_resolved": eps,
                                   "active_voxels": band.n_active})
    print(f"voxelize: {band.n_active} active voxels -> {args.out}")
    return 0


def _cmd_distance(args) -> int:
    cloud_hash = caches.file_sha256(args.cloud)
    cloud = load_cloud(args.cloud)
    band = caches.load_band(args.band, upstream=cloud_hash)
    policy = f"face:{args.seed_face}" if args.seed_face else args.seed_policy
    seeds = select_seed(cloud, band, policy)
    grid_field = fast_marching(band, seeds)
    rho = interpolate_to_points(grid_field, band, cloud)
    caches.save_distance(grid_field, rho, args.out,
                         upstream=caches.file_sha256(args.band),
                         root=cloud_hash, seed_provenance=seeds.provenance)
    _log_resolved(args, args.out, {"seed": seeds.provenance})
    print(f"distance: seeded {seeds.provenance} -> {args.out}")
    return 0


def _cmd_frames(args) -> int:
    cloud_hash = caches.file_sha256(args.cloud)
    cloud = load_cloud(args.cloud)
    _, rho = caches.load_distance(args.field, root=cloud_hash)
    policy = "use-input" if args.normals == "input" else "lpca-centroid-oriented"
    frames = build_frame_field(cloud, rho, args.k, policy)
    caches.save_frames(frames, args.out, upstream=caches.file_sha256(args.field),
                       root=cloud_hash)
    _log_resolved(args, args.out, {"singular": frames.n_singular})
    print(f"frames: {frames.n_singular} singular of {len(cloud)} -> {args.out}")
    return 0


def _cmd_op_build(args) -> int:
    cloud_hash = caches.file_sha256(args.cloud)
    cloud = load_cloud(args.cloud)
    frames = caches.load_frames(args.frames, root=cloud_hash)
    index = NeighborIndex(cloud)
    if args.out_points == "all":
        out_idx = np.arange(len(cloud))
    elif args.out_points.startswith("fps:"):
        n = int(args.out_points.split(":")[1])
        out_idx = farthest_point_sampling(cloud, np.arange(len(cloud)), n, 0)
    else:
        raise ConfigError(f"bad --out-points {args.out_points!r}")
    delta = "auto" if args.delta == "auto" else float(args.delta)
    spec = KernelSpec(k=args.k_taps, delta=delta, alpha=args.alpha)
    op = build_operator(cloud, index, frames, out_idx, spec)
    upstream = caches.combined_hash(args.cloud, args.frames)
    save_operator(op, args.out, upstream_hash=upstream)
    _log_resolved(args, args.out, {"delta_resolved": op.delta, "n_out": op.n_out})
    print(f"op-build: {op.n_out} x {op.k * op.k} taps, delta {op.delta:.6g} -> {args.out}")
    return 0


def _cmd_conv(args) -> int:
    op = load_operator(args.op)
    feats = np.load(args.features)["features"]
    weights = np.load(args.weights)["weights"]
    out = op_apply(op, weights, feats)
    np.savez(args.out, features=out)
    print(f"conv: {out.shape[0]} x {out.shape[1]} -> {args.out}")
    return 0


def _cmd_fps(args) -> int:
    cloud = load_cloud(args.cloud)
    idx = farthest_point_sampling(cloud, np.arange(len(cloud)), args.n, args.start)
    np.savetxt(args.out, idx, fmt="%d")
    print(f"fps: {args.n} indices -> {args.out}")
    return 0


def _cmd_gen_data(args) -> int:
    spec = DatasetSpec(
        families=tuple(args.families.split(",")),
        clouds_per_family=args.clouds_per_family,
        points_per_cloud=args.points,
        seed=args.seed,
        test_fraction=args.test_fraction,
    )
    dataset = make_dataset(spec)
    manifest = write_dataset(dataset, args.out)
    _log_resolved(args, Path(args.out) / "gen", {"manifest": str(manifest)})
    print(f"gen-data: {len(dataset.clouds)} clouds -> {manifest}")
    return 0


# -- dataset/bundle plumbing for train & eval --------------------------------

def _pipeline_config(args) -> PipelineConfig:
    doc = dict(getattr(args, "pipeline", {}) or {})
    eps = doc.get("epsilon", "auto")
    return PipelineConfig(
        resolution=int(doc.get("resolution", 100)),
        epsilon=None if eps in ("auto", None) else float(eps),
        seed_policy=doc.get("seed_policy", "min:z"),
        neighbors=int(doc.get("neighbors", 16)),
        normal_policy=doc.get("normal_policy", "use-input"),
        kernel_k=int(doc.get("kernel_k", 3)),
        delta_alpha=float(doc.get("delta_alpha", 1.0)),
        ratios=tuple(doc.get("ratios", (1.0, 0.25, 0.0625))),
        fps_start=int(doc.get("fps_start", 0)),
    )


def _network_config(args, pipeline: PipelineConfig, n_classes: int) -> NetworkConfig:
    doc = dict(getattr(args, "network", {}) or {})
    task = doc.get("task", ["classification", n_classes])
    return NetworkConfig(
        task=(task[0], int(task[1])),
        ratios=tuple(pipeline.ratios),
        widths=tuple(doc.get("widths", (32, 64))),
        head_hidden=int(doc.get("head_hidden", 128)),
        decode_widths=tuple(doc.get("decode_widths", (32, 16))),
        residual_blocks=int(doc.get("residual_blocks", 1)),
        kernel_k=pipeline.kernel_k,
    )


def _train_config(args) -> TrainConfig:
    doc = dict(getattr(args, "train", {}) or {})
    aug = doc.get("augment", {})
    return TrainConfig(
        optimizer=doc.get("optimizer", "sgd"),
        lr=float(doc.get("lr", 0.1)),
        momentum=float(doc.get("momentum", 0.9)),
        betas=tuple(doc.get("betas", (0.9, 0.999))),
        eps=float(doc.get("eps", 1e-8)),
        epochs=int(doc.get("epochs", 30)),
        batch_size=int(doc.get("batch_size", 8)),
        seed=int(doc.get("seed", 0)),
        voting_rounds=int(doc.get("voting_rounds", 1)),
        augment=AugmentConfig(
            rotation=bool(aug.get("rotation", True)),
            scale_range=tuple(aug.get("scale_range", (0.9, 1.1))),
            jitter_sigma=float(aug.get("jitter_sigma", 0.01)),
        ),
    )


def _cache_dir(args, data_dir: Path) -> Path:
    if args.cache_dir:
        return Path(args.cache_dir)
    env = os.environ.get("NPTC_CACHE_DIR")
    return Path(env) if env else data_dir / "cache"


def _load_training_set(args) -> tuple:
    data_dir = Path(args.data)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise CacheMissError("dataset manifest not found", path=str(manifest_path))
    with open(manifest_path) as f:
        manifest = json.load(f)
    pipeline = _pipeline_config(args)
    cache_dir = _cache_dir(args, data_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    bundles = []
    labels = []
    for rec in manifest["clouds"]:
        cloud_path = data_dir / rec["file"]
        parts = None
        if rec.get("parts_file"):
            parts = np.loadtxt(data_dir / rec["parts_file"], dtype=np.int64)
        bundle = _load_or_build_bundle(cloud_path, cache_dir, pipeline,
                                       args.precompute, rec["label"], parts)
        bundles.append(bundle)
        labels.append(rec["label"])
    dataset = TrainingSet(
        bundles=bundles,
        labels=np.asarray(labels, dtype=np.int64),
        train_idx=np.asarray(manifest["train"], dtype=np.int64),
        test_idx=np.asarray(manifest["test"], dtype=np.int64),
    )
    return dataset, manifest, pipeline


def _load_or_build_bundle(cloud_path: Path, cache_dir: Path,
                          pipeline: PipelineConfig, precompute: bool,
                          label: int, parts):
    from .network import CloudBundle

    stem = cloud_path.stem
    cloud_hash = caches.file_sha256(cloud_path)
    hier_path = cache_dir / f"{stem}.hier.npz"
    n_stages = len(pipeline.ratios) - 1
    op_paths = ([cache_dir / f"{stem}.down{i}.nptc" for i in range(n_stages)]
                + [cache_dir / f"{stem}.res{i}.nptc" for i in range(n_stages)])
    have_all = hier_path.exists() and all(p.exists() for p in op_paths)
    cloud = load_cloud(cloud_path)
    if not have_all:
        if not precompute:
            raise CacheMissError(
                f"per-cloud caches for {cloud_path.name} are missing "
                "(run with --precompute)", path=str(hier_path))
        artifacts = build_cloud_bundle(cloud, pipeline, label=label,
                                       part_labels=parts)
        bundle = artifacts.bundle
        caches.save_hierarchy(bundle.hierarchy, hier_path, upstream=cloud_hash)
        for i, op in enumerate(bundle.down_ops):
            save_operator(op, op_paths[i], upstream_hash=cloud_hash)
        for i, op in enumerate(bundle.res_ops):
            save_operator(op, op_paths[n_stages + i], upstream_hash=cloud_hash)
        return bundle
    hierarchy = caches.load_hierarchy(hier_path, upstream=cloud_hash)
    down_ops = [load_operator(op_paths[i], expect_hash=cloud_hash)
                for i in range(n_stages)]
    res_ops = [load_operator(op_paths[n_stages + i], expect_hash=cloud_hash)
               for i in range(n_stages)]
    return CloudBundle(points=cloud.points, hierarchy=hierarchy,
                       down_ops=down_ops, res_ops=res_ops,
                       label=label, part_labels=parts)


def _cmd_train(args) -> int:
    dataset, manifest, pipeline = _load_training_set(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net_cfg = _network_config(args, pipeline, n_classes=len(manifest["families"]))
    train_cfg = _train_config(args)
    model_seed = int(dict(getattr(args, "network", {}) or {}).get("model_seed", 0))
    model = NPTCNet(net_cfg, seed=model_seed)
    t0 = time.time()
    metrics = train_model(model, dataset, train_cfg)
    elapsed = time.time() - t0
    write_metrics_csv(out_dir / "metrics.csv", metrics)
    manifest_hash = caches.file_sha256(Path(args.data) / "manifest.json")
    save_checkpoint(model, out_dir / "model.ckpt", upstream_hash=manifest_hash)
    _log_resolved(args, out_dir / "train", {
        "elapsed_s": elapsed,
        "final": metrics[-1] if metrics else None,
    })
    final = metrics[-1] if metrics else (0, float("nan"), float("nan"))
    print(f"train: {len(metrics)} epochs in {elapsed:.1f}s, "
          f"final loss {final[1]:.4f}, test accuracy {final[2]:.4f}")
    return 0


def _cmd_eval(args) -> int:
    dataset, manifest, pipeline = _load_training_set(args)
    net_cfg = _network_config(args, pipeline, n_classes=len(manifest["families"]))
    model = NPTCNet(net_cfg, seed=0)
    state, _ = load_checkpoint(args.checkpoint)
    model.load_state_dict(state)
    if args.voting > 1:
        correct = 0
        for ci in dataset.test_idx:
            proba = predict_with_voting(model, dataset.bundles[ci],
                                        n_a=args.voting, seed=ci)
            correct += int(np.argmax(proba[0]) == dataset.bundles[ci].label)
        acc = correct / len(dataset.test_idx)
    else:
        acc = evaluate(model, dataset)
    if args.out:
        write_metrics_csv(args.out, [(0, float("nan"), acc)])
    print(f"eval: accuracy {acc:.4f} over {len(dataset.test_idx)} clouds "
          f"(voting={args.voting})")
    return 0


def _cmd_export_ply(args) -> int:
    cloud_hash = caches.file_sha256(args.cloud)
    cloud = load_cloud(args.cloud)
    if args.u1_from:
        frames = caches.load_frames(args.u1_from, root=cloud_hash)
        colors = np.clip((frames.u1 * 0.5 + 0.5) * 255, 0, 255).astype(np.uint8)
        export_ply_with_scalars(cloud, colors, args.out,
                                comment=f"upstream sha256 {cloud_hash.hex()}")
    elif args.field:
        _, rho = caches.load_distance(args.field, root=cloud_hash)
        export_ply_with_scalars(cloud, rho.values, args.out,
                                comment=f"upstream sha256 {cloud_hash.hex()}")
    else:
        raise ConfigError("export-ply needs --field or --u1-from")
    print(f"export-ply: {len(cloud)} vertices -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .testing_fragments import standard_fragments

    worst = 0.0
    for seed in range(args.seeds):
        for name, fragment, x in standard_fragments(seed):
            err = grad_check(fragment, x, rng=np.random.default_rng(seed))
            status = "ok" if err <= args.tolerance else "FAIL"
            print(f"gradcheck seed={seed} {name}: max rel err {err:.3e} [{status}]")
            worst = max(worst, err)
    if worst > args.tolerance:
        print(f"gradcheck: worst {worst:.3e} exceeds tolerance {args.tolerance:.1e}",
              file=sys.stderr)
        return 1
    print(f"gradcheck: all fragments within {args.tolerance:.1e} (worst {worst:.3e})")
    return 0


if __name__ == "__main__":
    sys.exit(main())

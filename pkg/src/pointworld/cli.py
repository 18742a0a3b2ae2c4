"""Command-line entry point.

Subcommands: `oracle render`, `cache build`, `condition render`,
`align run`, `sample run`, `export ply`, `stats`. Every run writes a
manifest.json (config hash, input hashes, per-stage timings); outputs go
through atomic rename so failed runs leave nothing behind. Structured
errors map to a single machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from .alignment import (
    align_disparity,
    apply_alignment,
    apply_metric,
    metric_scale,
)
from .cache import CullingConfig, WorldCache, build_cache, cache_stats, store_everything_cache
from .camera import Camera, DepthMap, RgbdFrame
from .condition import make_condition, pack_condition
from .denoisers import (
    EXTERN_IDENTITY_SNIPPET,
    ExternProcessDenoiser,
    GroundTruthDenoiser,
    IdentityDenoiser,
    StochasticTestDenoiser,
)
from .errors import (
    DimensionMismatchError,
    EmptyInputError,
    FormatError,
    InvariantError,
    WorldEngineError,
)
from .fileio import (
    atomic_dir,
    atomic_file,
    build_manifest,
    camera_from_dict,
    export_ply,
    import_ply,
    load_cameras,
    load_rgbd,
    read_depth_pfm,
    read_png_rgb,
    save_cameras,
    save_rgbd,
    write_depth_pfm,
    write_manifest,
    write_pfm,
    write_png_mask,
    write_png_rgb,
)
from .report import alignment_figure, cache_growth_figure, seam_figure, write_csv
from .sampler import SamplerConfig, run_autoregressive, seam_metrics
from .splat import SplatConfig
from .synthetic import (
    load_scene,
    load_trajectory_spec,
    render_ground_truth,
    render_scene_view,
    trajectory_cameras,
    trajectory_from_dict,
)

DEFAULT_ASPECT_RATIOS = (1.0, 1.25, 1.5, 1.75)


class _Timer:
    def __init__(self):
        self.timings = {}

    def stage(self, name):
        return _Stage(self, name)


class _Stage:
    def __init__(self, timer, name):
        self.timer, self.name = timer, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timer.timings[self.name] = time.perf_counter() - self.t0
        return False


def _apply_thread_override():
    threads = os.environ.get("POINTWORLD_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid config JSON ({e})") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: config must be a JSON object")
    return data


def _setting(args, config: dict, key: str, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _splat_config(args, config) -> SplatConfig:
    return SplatConfig(
        splat_radius=int(_setting(args, config, "splat_radius", 1)),
        depth_test_epsilon=float(_setting(args, config, "depth_test_epsilon", 1e-3)),
        near_plane=float(_setting(args, config, "near_plane", 1e-4)),
    )


def _culling_config(args, config) -> CullingConfig:
    return CullingConfig(
        normal_dot_threshold=float(_setting(args, config, "normal_dot_threshold", 0.0)),
        splat=_splat_config(args, config),
    )


def _load_frames_dir(path) -> list[RgbdFrame]:
    pfms = sorted(Path(path).glob("*.pfm"))
    if not pfms:
        raise EmptyInputError(f"no PFM frames found in {path}")
    frames = []
    for p in pfms:
        png = p.with_suffix(".png")
        if not png.exists():
            raise FormatError(f"missing color image for {p.name}")
        frames.append(RgbdFrame(read_png_rgb(png), read_depth_pfm(p)))
    return frames


def _load_depth_dir(path) -> list[DepthMap]:
    pfms = sorted(Path(path).glob("*.pfm"))
    if not pfms:
        raise EmptyInputError(f"no PFM depth maps found in {path}")
    return [read_depth_pfm(p) for p in pfms]


def _load_mask_dir(path) -> list[np.ndarray]:
    pngs = sorted(Path(path).glob("*.png"))
    if not pngs:
        raise EmptyInputError(f"no PNG masks found in {path}")
    return [read_png_rgb(p)[..., 0] > 0.5 for p in pngs]


def _load_trajectory(path) -> list[Camera]:
    """Camera-array JSON or a trajectory-spec object (sniffed by shape)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if isinstance(data, list):
        return [camera_from_dict(d) for d in data]
    if isinstance(data, dict):
        return trajectory_cameras(trajectory_from_dict(data))
    raise FormatError(f"{path}: expected a camera array or trajectory spec")


def _check_aspect(cameras: list[Camera], ratios):
    for cam in cameras:
        ratio = cam.intrinsics.width / cam.intrinsics.height
        if not any(abs(ratio - r) < 1e-6 for r in ratios):
            raise InvariantError(
                f"aspect ratio {ratio:.4f} not in whitelist {list(ratios)}"
            )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_oracle_render(args) -> int:
    timer = _Timer()
    scene = load_scene(args.scene)
    traj = load_trajectory_spec(args.traj)
    with timer.stage("render"):
        frames, cameras = render_ground_truth(scene, traj)
    with timer.stage("write"), atomic_dir(args.out) as tmp:
        for k, frame in enumerate(frames):
            save_rgbd(tmp / f"frame_{k:04d}", frame)
        save_cameras(tmp / "cameras.json", cameras)
        manifest = build_manifest(
            config={"scene": str(args.scene), "traj": str(args.traj)},
            inputs=[args.scene, args.traj],
            timings=timer.timings,
            outputs=[f"frame_{k:04d}" for k in range(len(frames))] + ["cameras.json"],
        )
        write_manifest(tmp / "manifest.json", manifest)
    print(f"rendered {len(frames)} frames to {args.out}")
    return 0


def cmd_cache_build(args) -> int:
    timer = _Timer()
    config_file = _load_config_file(args.config)
    cfg = _culling_config(args, config_file)
    with timer.stage("load"):
        frames = _load_frames_dir(args.frames)
        cameras = load_cameras(args.cameras)
    if len(frames) != len(cameras):
        raise DimensionMismatchError(
            f"{len(frames)} frames but {len(cameras)} cameras"
        )
    with timer.stage("build"):
        cache = build_cache(frames, cameras, cfg)
    stats = cache_stats(cache)

    out = Path(args.out)
    with timer.stage("write"):
        with atomic_file(out) as tmp:
            export_ply(tmp, cache)
        stats_path = Path(args.stats) if args.stats else out.with_suffix(".stats.json")
        with atomic_file(stats_path) as tmp:
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(stats, f, indent=2, sort_keys=True)
        if not args.no_figures:
            cache_growth_figure(stats, out.with_suffix(".growth.png"))
        manifest = build_manifest(
            config={
                "normal_dot_threshold": cfg.normal_dot_threshold,
                "splat_radius": cfg.splat.splat_radius,
                "depth_test_epsilon": cfg.splat.depth_test_epsilon,
                "near_plane": cfg.splat.near_plane,
            },
            inputs=[args.cameras] + sorted(Path(args.frames).glob("*.pfm")),
            timings=timer.timings,
            outputs=[out, stats_path],
        )
        write_manifest(out.with_suffix(".manifest.json"), manifest)
    print(
        f"cache: {stats['total_points']} points from {stats['total_candidates']} candidates, "
        f"reduction {stats['reduction_ratio']:.4f}"
    )
    return 0


def cmd_condition_render(args) -> int:
    timer = _Timer()
    with timer.stage("load"):
        cache = import_ply(args.cache)
        cameras = load_cameras(args.cameras)
    splat = SplatConfig(splat_radius=args.splat_radius if args.splat_radius is not None else 1)
    with timer.stage("render"):
        conditions = [
            make_condition(cache, cam.intrinsics, cam.pose, splat, view_index=k)
            for k, cam in enumerate(cameras)
        ]
        packed = pack_condition(conditions, args.placeholder_height, args.pool_factor)
    with timer.stage("write"), atomic_dir(args.out) as tmp:
        for k, (cond, pk) in enumerate(zip(conditions, packed)):
            write_pfm(tmp / f"packed_{k:04d}.pfm", pk.grid)
            write_pfm(tmp / f"packed_mask_{k:04d}.pfm", pk.mask.astype(np.float64))
            write_png_rgb(tmp / f"partial_rgb_{k:04d}.png", cond.partial_rgb)
            write_png_mask(tmp / f"mask_{k:04d}.png", cond.mask)
            write_depth_pfm(tmp / f"partial_depth_{k:04d}.pfm", cond.partial_depth)
        sidecar = {
            "placeholder_height": packed[0].placeholder_height,
            "pool_factor": packed[0].pool_factor,
            "depth_min": packed[0].depth_min,
            "depth_max": packed[0].depth_max,
            "frames": len(packed),
        }
        with open(tmp / "condition.json", "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True)
        manifest = build_manifest(
            config=sidecar,
            inputs=[args.cache, args.cameras],
            timings=timer.timings,
        )
        write_manifest(tmp / "manifest.json", manifest)
    print(f"rendered {len(packed)} conditions to {args.out}")
    return 0


def cmd_align_run(args) -> int:
    timer = _Timer()
    with timer.stage("load"):
        src = _load_depth_dir(args.src)
        ref = _load_depth_dir(args.ref)
        masks = _load_mask_dir(args.mask) if args.mask else [None] * len(src)
        metric_maps = _load_depth_dir(args.metric) if args.metric else None
        cameras = load_cameras(args.cameras) if args.cameras else None
    if len(src) != len(ref) or len(masks) != len(src):
        raise DimensionMismatchError("src, ref, and mask directories must pair up")

    rows = []
    with timer.stage("align"):
        if args.per_sequence:
            stack = lambda maps: DepthMap(
                np.concatenate([m.values for m in maps]),
                np.concatenate([m.valid for m in maps]),
            )
            mask_stack = (
                np.concatenate(masks) if masks[0] is not None else None
            )
            pooled = align_disparity(stack(src), stack(ref), mask_stack)
            solutions = [pooled] * len(src)
        else:
            solutions = [
                align_disparity(s, r, m) for s, r, m in zip(src, ref, masks)
            ]
        aligned = [apply_alignment(s, sol) for s, sol in zip(src, solutions)]
        for k, sol in enumerate(solutions):
            rows.append(
                {
                    "frame": k,
                    "scale": sol.scale,
                    "bias": sol.bias,
                    "residual": sol.residual,
                    "valid_count": sol.valid_count,
                }
            )

    scales = None
    with timer.stage("metric"):
        if metric_maps is not None:
            if args.metric_per_frame:
                scales = [metric_scale(a, m) for a, m in zip(aligned, metric_maps)]
            else:
                scales = [metric_scale(aligned, metric_maps)] * len(aligned)
            for k, s in enumerate(scales):
                rows[k]["s_metric"] = s.s_metric

    with timer.stage("write"), atomic_dir(args.out) as tmp:
        out_cameras = []
        for k, depth in enumerate(aligned):
            if scales is not None:
                pose = cameras[k].pose if cameras else None
                if pose is not None:
                    depth, pose = apply_metric(depth, pose, scales[k])
                    out_cameras.append(Camera(cameras[k].intrinsics, pose))
                else:
                    depth, _ = apply_metric(depth, _identity_pose(), scales[k])
            write_depth_pfm(tmp / f"aligned_{k:04d}.pfm", depth)
        if out_cameras:
            save_cameras(tmp / "cameras_metric.json", out_cameras)
        report = {
            "per_frame": rows,
            "per_sequence": bool(args.per_sequence),
            "metric_per_frame": bool(args.metric_per_frame),
        }
        report_name = Path(args.report).name if args.report else "report.json"
        with open(tmp / report_name, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
        fieldnames = ["frame", "scale", "bias", "residual", "valid_count"]
        if scales is not None:
            fieldnames.append("s_metric")
        write_csv(tmp / "report.csv", fieldnames, rows)
        if not args.no_figures:
            alignment_figure(rows, tmp / "report.png")
        inputs = sorted(Path(args.src).glob("*.pfm")) + sorted(Path(args.ref).glob("*.pfm"))
        manifest = build_manifest(
            config={"per_sequence": bool(args.per_sequence),
                    "metric_per_frame": bool(args.metric_per_frame)},
            inputs=inputs,
            timings=timer.timings,
        )
        write_manifest(tmp / "manifest.json", manifest)
    print(f"aligned {len(aligned)} frames to {args.out}")
    return 0


def _identity_pose():
    from .camera import CameraPose

    return CameraPose.identity()


def cmd_sample_run(args) -> int:
    timer = _Timer()
    config_file = _load_config_file(args.config)
    with timer.stage("load"):
        cameras = _load_trajectory(args.traj)
        init_frame = load_rgbd(args.init)
    ratios = tuple(
        float(r) for r in _setting(args, config_file, "aspect_ratios", DEFAULT_ASPECT_RATIOS)
    )
    _check_aspect(cameras, ratios)

    cull_cfg = _culling_config(args, config_file)
    sampler_cfg = SamplerConfig(
        clip_length=int(_setting(args, config_file, "clip_length", 49)),
        overlap=_setting(args, config_file, "overlap", None),
        refine_noise_level=float(_setting(args, config_file, "refine_noise_level", 0.2)),
        seed=int(_setting(args, config_file, "seed", 0)),
        blend=str(_setting(args, config_file, "blend", "uniform")),
        refine_whole_segment=bool(
            _setting(args, config_file, "refine_whole_segment", False)
        ),
        placeholder_height=int(_setting(args, config_file, "placeholder_height", 8)),
        pool_factor=int(_setting(args, config_file, "pool_factor", 8)),
    )

    if args.denoiser == "identity":
        denoiser = IdentityDenoiser()
    elif args.denoiser == "stochastic":
        denoiser = StochasticTestDenoiser()
    elif args.denoiser == "oracle":
        if not args.scene:
            raise InvariantError("the oracle denoiser requires --scene")
        scene = load_scene(args.scene)
        rendered = {}

        def provider(k, _scene=scene, _cams=cameras, _memo=rendered):
            if k not in _memo:
                _memo[k] = render_scene_view(_scene, _cams[k])
            return _memo[k]

        denoiser = GroundTruthDenoiser(provider)
    else:
        command = shlex.split(args.extern_cmd) if args.extern_cmd else [
            sys.executable, "-c", EXTERN_IDENTITY_SNIPPET,
        ]
        denoiser = ExternProcessDenoiser(command)

    with timer.stage("sample"):
        result = run_autoregressive(init_frame, cameras, denoiser, cull_cfg, sampler_cfg)
    metrics = seam_metrics(result.frames, result.schedule)
    stats = cache_stats(result.cache)

    with timer.stage("write"), atomic_dir(args.out) as tmp:
        for k, frame in enumerate(result.frames):
            save_rgbd(tmp / f"frame_{k:04d}", frame)
        export_ply(tmp / "cache.ply", result.cache)
        with open(tmp / "stats.json", "w", encoding="utf-8") as f:
            json.dump(stats, f, indent=2, sort_keys=True)
        with open(tmp / "seam.json", "w", encoding="utf-8") as f:
            json.dump(metrics, f, indent=2, sort_keys=True)
        if not args.no_figures:
            seam_figure(metrics, tmp / "seam.png")
            cache_growth_figure(stats, tmp / "growth.png")
        write_csv(
            tmp / "seam.csv",
            ["transition", "delta", "boundary"],
            [
                {
                    "transition": t,
                    "delta": d,
                    "boundary": int(t in set(metrics["boundary_transitions"])),
                }
                for t, d in enumerate(metrics["per_transition"])
            ],
        )
        manifest = build_manifest(
            config={
                "denoiser": args.denoiser,
                "seed": sampler_cfg.seed,
                "clip_length": sampler_cfg.clip_length,
                "overlap": sampler_cfg.effective_overlap,
                "refine_noise_level": sampler_cfg.refine_noise_level,
                "blend": sampler_cfg.blend,
                "normal_dot_threshold": cull_cfg.normal_dot_threshold,
                "splat_radius": cull_cfg.splat.splat_radius,
            },
            inputs=[args.traj, Path(args.init).with_suffix(".pfm"),
                    Path(args.init).with_suffix(".png")],
            timings=timer.timings,
        )
        write_manifest(tmp / "manifest.json", manifest)
    print(
        f"sampled {len(result.frames)} frames in {len(result.schedule.clips)} clips, "
        f"seam ratio {metrics['ratio']:.3f}"
    )
    return 0


def cmd_export_ply(args) -> int:
    timer = _Timer()
    if bool(args.cache) == bool(args.frames):
        raise InvariantError("export ply needs exactly one of --cache or --frames")
    with timer.stage("load"):
        if args.cache:
            cache = import_ply(args.cache)
            inputs = [args.cache]
        else:
            if not args.cameras:
                raise InvariantError("--frames requires --cameras")
            frames = _load_frames_dir(args.frames)
            cameras = load_cameras(args.cameras)
            if args.store_everything:
                cache = store_everything_cache(frames, cameras)
            else:
                cache = build_cache(frames, cameras, CullingConfig())
            inputs = [args.cameras] + sorted(Path(args.frames).glob("*.pfm"))
    with timer.stage("write"):
        with atomic_file(args.out) as tmp:
            export_ply(tmp, cache)
        manifest = build_manifest(
            config={"store_everything": bool(args.store_everything)},
            inputs=inputs,
            timings=timer.timings,
            outputs=[args.out],
        )
        write_manifest(Path(args.out).with_suffix(".manifest.json"), manifest)
    print(f"exported {len(cache)} points to {args.out}")
    return 0


def cmd_stats(args) -> int:
    cache = import_ply(args.cache)
    stats = cache_stats(cache)
    if args.json:
        json.dump(stats, sys.stdout, indent=2, sort_keys=True)
        print()
    else:
        print(f"points: {stats['total_points']}")
        print(f"candidates: {stats['total_candidates']}")
        print(f"reduction: {stats['reduction_ratio']:.6g}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def _add_splat_flags(p):
    p.add_argument("--splat-radius", type=int, dest="splat_radius")
    p.add_argument("--depth-test-epsilon", type=float, dest="depth_test_epsilon")
    p.add_argument("--near-plane", type=float, dest="near_plane")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointworld",
        description="Point-cloud world cache, condition rendering, sampling, and depth alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    oracle = sub.add_parser("oracle", help="synthetic ground-truth scenes")
    oracle_sub = oracle.add_subparsers(dest="subcommand", required=True)
    o_render = oracle_sub.add_parser("render", help="render a scene along a trajectory")
    o_render.add_argument("--scene", required=True)
    o_render.add_argument("--traj", required=True)
    o_render.add_argument("--out", required=True)
    o_render.set_defaults(func=cmd_oracle_render)

    cache_p = sub.add_parser("cache", help="world cache operations")
    cache_sub = cache_p.add_subparsers(dest="subcommand", required=True)
    c_build = cache_sub.add_parser("build", help="build a culled cache from RGB-D frames")
    c_build.add_argument("--frames", required=True)
    c_build.add_argument("--cameras", required=True)
    c_build.add_argument("--out", required=True)
    c_build.add_argument("--stats")
    c_build.add_argument("--config")
    c_build.add_argument("--normal-dot-threshold", type=float, dest="normal_dot_threshold")
    c_build.add_argument("--no-figures", action="store_true")
    _add_splat_flags(c_build)
    c_build.set_defaults(func=cmd_cache_build)

    cond = sub.add_parser("condition", help="condition rendering")
    cond_sub = cond.add_subparsers(dest="subcommand", required=True)
    c_render = cond_sub.add_parser("render", help="render packed conditions from a cache")
    c_render.add_argument("--cache", required=True)
    c_render.add_argument("--cameras", required=True)
    c_render.add_argument("--out", required=True)
    c_render.add_argument("--placeholder-height", type=int, default=8)
    c_render.add_argument("--pool-factor", type=int, default=8)
    c_render.add_argument("--splat-radius", type=int, dest="splat_radius")
    c_render.set_defaults(func=cmd_condition_render)

    align = sub.add_parser("align", help="depth alignment")
    align_sub = align.add_subparsers(dest="subcommand", required=True)
    a_run = align_sub.add_parser("run", help="align source depth to a reference")
    a_run.add_argument("--src", required=True)
    a_run.add_argument("--ref", required=True)
    a_run.add_argument("--metric")
    a_run.add_argument("--cameras")
    a_run.add_argument("--mask")
    a_run.add_argument("--out", required=True)
    a_run.add_argument("--report")
    a_run.add_argument("--per-sequence", action="store_true")
    a_run.add_argument("--metric-per-frame", action="store_true")
    a_run.add_argument("--no-figures", action="store_true")
    a_run.set_defaults(func=cmd_align_run)

    sample = sub.add_parser("sample", help="auto-regressive sampling")
    sample_sub = sample.add_subparsers(dest="subcommand", required=True)
    s_run = sample_sub.add_parser("run", help="generate frames along a trajectory")
    s_run.add_argument("--init", required=True, help="frame prefix (reads .pfm and .png)")
    s_run.add_argument("--traj", required=True)
    s_run.add_argument(
        "--denoiser",
        choices=["identity", "oracle", "stochastic", "extern"],
        default="identity",
    )
    s_run.add_argument("--scene", help="scene JSON for the oracle denoiser")
    s_run.add_argument("--extern-cmd", help="command line for the extern denoiser")
    s_run.add_argument("--seed", type=int)
    s_run.add_argument("--out", required=True)
    s_run.add_argument("--config")
    s_run.add_argument("--clip-length", type=int, dest="clip_length")
    s_run.add_argument("--overlap", type=int)
    s_run.add_argument("--refine-noise-level", type=float, dest="refine_noise_level")
    s_run.add_argument("--blend", choices=["uniform", "linear-ramp"])
    s_run.add_argument("--refine-whole-segment", action="store_const", const=True,
                       dest="refine_whole_segment")
    s_run.add_argument("--placeholder-height", type=int, dest="placeholder_height")
    s_run.add_argument("--pool-factor", type=int, dest="pool_factor")
    s_run.add_argument("--normal-dot-threshold", type=float, dest="normal_dot_threshold")
    s_run.add_argument("--no-figures", action="store_true")
    _add_splat_flags(s_run)
    s_run.set_defaults(func=cmd_sample_run)

    export = sub.add_parser("export", help="exports")
    export_sub = export.add_subparsers(dest="subcommand", required=True)
    e_ply = export_sub.add_parser("ply", help="export points as binary PLY")
    e_ply.add_argument("--cache")
    e_ply.add_argument("--frames")
    e_ply.add_argument("--cameras")
    e_ply.add_argument("--store-everything", action="store_true")
    e_ply.add_argument("--out", required=True)
    e_ply.set_defaults(func=cmd_export_ply)

    stats_p = sub.add_parser("stats", help="print cache statistics")
    stats_p.add_argument("--cache", required=True)
    stats_p.add_argument("--json", action="store_true")
    stats_p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    _apply_thread_override()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WorldEngineError as e:
        print(f"error:{e.code}: {e}", file=sys.stderr)
        return e.exit_status
    except FileNotFoundError as e:
        print(f"error:unreadable_input: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

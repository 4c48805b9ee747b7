"""Command-line entry point: ``advscene <subcommand> ...``.

Exit status: 0 success, 1 operational error, 2 usage error. Results go to
stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import degrade as dg
from . import kernels
from .depth import (DEFAULT_FILL_DEPTH, DEFAULT_MAX_RADIUS, DepthMap, densify, encode_depth,
                    project_lidar_to_depth, project_points)
from .eval3d import DIFFICULTIES, EvalConfig, evaluate
from .kitti_io import KittiLayout, load_label_dir, parse_calib, parse_labels, read_point_cloud
from .kvfile import format_kv, parse_kv
from .selftest import run_selftest
from .synthesize import synthesize_dataset
from .twin_depth import LaplaceDepth, fuse, instance_depth_loss, split_depth_targets


class CommandError(Exception):
    """Operational failure reported with exit status 1."""


def default_threads() -> int:
    env = os.environ.get("ADVSCENE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CommandError(f"ADVSCENE_THREADS must be an integer, got {env!r}")
        if n < 1:
            raise CommandError("ADVSCENE_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _finite(text):
    value = float(text)
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError("must be finite")
    return value


def _label_dir(path: Path) -> Path:
    return path / "label_2" if (path / "label_2").is_dir() else path


def cmd_synthesize(args) -> int:
    preset = dg.get_preset(args.preset)
    if args.params:
        overrides = parse_kv(Path(args.params).read_text())
        preset = dg.WeatherPreset(preset.name, dg.with_overrides(preset.params, overrides))
    threads = args.threads or default_threads()
    manifest = synthesize_dataset(args.input, args.output, preset, args.seed,
                                  depth_source=args.depth_source, depth_dir=args.depth_dir,
                                  threads=threads, max_radius=args.max_radius,
                                  fill_value=args.fill_depth)
    print(f"{manifest['frame_count']} frames written to {args.output} "
          f"({manifest['skipped_count']} skipped), preset {preset.name}")
    return 0


def _image_size(path: Path) -> tuple:
    with Image.open(path) as img:
        return img.size


def cmd_project_depth(args) -> int:
    layout = KittiLayout(args.input)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    fids = layout.frame_ids()
    if not fids:
        raise CommandError(f"{layout.root}: no frames under {layout.image_dir}/")

    def work(fid):
        needed = (layout.image(fid), layout.calib(fid), layout.velodyne(fid))
        missing = [p.parent.name for p in needed if not p.is_file()]
        if missing:
            return fid, f"missing {', '.join(missing)}"
        width, height = _image_size(layout.image(fid))
        calib = parse_calib(layout.calib(fid).read_text())
        cloud = read_point_cloud(layout.velodyne(fid).read_bytes())
        depth = project_lidar_to_depth(cloud, calib, width, height)
        if not args.sparse:
            depth = densify(depth, args.max_radius, args.fill_depth)
        (out_dir / f"{fid}.png").write_bytes(encode_depth(depth))
        return fid, ""

    threads = args.threads or default_threads()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(work, fids))
    skipped = [(fid, why) for fid, why in results if why]
    for fid, why in skipped:
        print(f"skipped {fid}: {why}", file=sys.stderr)
    print(f"{len(results) - len(skipped)} depth rasters written to {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    gt = load_label_dir(_label_dir(Path(args.gt)))
    pred = load_label_dir(_label_dir(Path(args.pred)))
    if not gt:
        raise CommandError(f"no label files found under {args.gt}")
    config = EvalConfig(class_name=args.class_name, iou_threshold=args.iou,
                        difficulties=tuple(args.difficulty or DIFFICULTIES),
                        dontcare_overlap=args.dontcare_overlap)
    report = evaluate(gt, pred, config)
    sys.stdout.write(report.table())
    Path(args.report).write_text(format_kv(report.items()))
    print(f"report written to {args.report}", file=sys.stderr)
    return 0


def cmd_fuse(args) -> int:
    fused = fuse(LaplaceDepth(args.obj_depth, args.obj_unc), LaplaceDepth(args.sce_depth, args.sce_unc))
    sys.stdout.write(format_kv([("depth", fused.depth), ("uncertainty", fused.uncertainty)]))
    return 0


def cmd_loss(args) -> int:
    value, d_depth, d_unc = instance_depth_loss(LaplaceDepth(args.pred_depth, args.pred_unc), args.gt)
    sys.stdout.write(format_kv([("loss", value), ("d_depth", d_depth), ("d_uncertainty", d_unc)]))
    return 0


def cmd_depth_targets(args) -> int:
    layout = KittiLayout(args.input)
    fid = args.frame
    for path in (layout.image(fid), layout.label(fid), layout.calib(fid), layout.velodyne(fid)):
        if not path.is_file():
            raise CommandError(f"missing {path}")
    width, height = _image_size(layout.image(fid))
    calib = parse_calib(layout.calib(fid).read_text())
    depth: DepthMap = project_lidar_to_depth(read_point_cloud(layout.velodyne(fid).read_bytes()),
                                             calib, width, height)
    if args.scene_depth == "dense":
        depth = densify(depth, args.max_radius, args.fill_depth)
    items = [("frame", fid), ("scene_depth_source", args.scene_depth)]
    labels = [lab for lab in parse_labels(layout.label(fid).read_text()) if not lab.is_dontcare]
    for i, lab in enumerate(labels):
        x, y, z = lab.location
        # 3D centre sits half a box height above the bottom-centre location
        u, v = project_points(np.array([[x, y - lab.dims[0] / 2.0, z]]), calib)
        scene = float("nan")
        if z > 0 and np.isfinite(u[0]) and np.isfinite(v[0]):
            col, row = int(math.floor(u[0] + 0.5)), int(math.floor(v[0] + 0.5))
        else:
            col = row = -1
        if 0 <= row < height and 0 <= col < width and depth.values[row, col] > 0:
            scene = float(depth.values[row, col])
        obj = split_depth_targets(z, scene) if math.isfinite(scene) else float("nan")
        items += [(f"object.{i}.class", lab.class_name), (f"object.{i}.instance_depth", float(z)),
                  (f"object.{i}.scene_depth", scene), (f"object.{i}.object_depth", obj)]
    sys.stdout.write(format_kv(items))
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    print(f"kernel backend: {kernels.BACKEND}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advscene",
        description="Adverse-weather KITTI synthesis, twin-depth kernels and AP3D_R40 evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=_positive_int, default=None,
                       help="worker threads (default: $ADVSCENE_THREADS or all cores)")

    def add_densify(p):
        p.add_argument("--max-radius", type=float, default=DEFAULT_MAX_RADIUS,
                       help="densification search radius in pixels (default %(default)s)")
        p.add_argument("--fill-depth", type=float, default=DEFAULT_FILL_DEPTH,
                       help="depth in meters for pixels with no LiDAR neighbour (default %(default)s)")

    p = sub.add_parser("synthesize", help="degrade a KITTI split under a weather preset")
    p.add_argument("--input", required=True, help="KITTI root with image_2/, calib/, velodyne/")
    p.add_argument("--output", required=True, help="output root (layout is mirrored)")
    p.add_argument("--preset", required=True, choices=sorted(dg.PRESETS))
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument("--depth-source", choices=("lidar", "files"), default="lidar")
    p.add_argument("--depth-dir", default=None, help="16-bit depth rasters (default <input>/depth)")
    p.add_argument("--params", default=None, help="key = value parameter override file")
    add_threads(p)
    add_densify(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("project-depth", help="write 16-bit depth rasters from LiDAR scans")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--sparse", action="store_true", help="skip densification")
    add_threads(p)
    add_densify(p)
    p.set_defaults(func=cmd_project_depth)

    p = sub.add_parser("evaluate", help="AP3D_R40 of predictions against ground truth")
    p.add_argument("--gt", required=True, help="label directory (or KITTI root with label_2/)")
    p.add_argument("--pred", required=True, help="prediction directory, 16-field KITTI lines")
    p.add_argument("--class", dest="class_name", default="Car")
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--difficulty", action="append", choices=DIFFICULTIES)
    p.add_argument("--dontcare-overlap", type=float, default=0.5)
    p.add_argument("--report", default="eval_report.txt", help="key = value report path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuse", help="fuse object and scene Laplace depths")
    p.add_argument("--obj-depth", type=_finite, required=True)
    p.add_argument("--obj-unc", type=_finite, required=True)
    p.add_argument("--sce-depth", type=_finite, required=True)
    p.add_argument("--sce-unc", type=_finite, required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("loss", help="instance-depth uncertainty loss and its gradients")
    p.add_argument("--pred-depth", type=_finite, required=True)
    p.add_argument("--pred-unc", type=_finite, required=True)
    p.add_argument("--gt", type=_finite, required=True)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("depth-targets", help="scene/object depth targets for one frame's labels")
    p.add_argument("--input", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--scene-depth", choices=("sparse", "dense"), default="dense")
    add_densify(p)
    p.set_defaults(func=cmd_depth_targets)

    p = sub.add_parser("kernels-selftest", help="run the kernel invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, ValueError, OSError, RuntimeError) as exc:
        print(f"advscene {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

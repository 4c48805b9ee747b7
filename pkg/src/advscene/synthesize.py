"""Render a whole KITTI split under one weather preset."""
from __future__ import annotations

import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import degrade as dg
from .depth import (DEFAULT_FILL_DEPTH, DEFAULT_MAX_RADIUS, decode_depth, densify,
                    project_lidar_to_depth)
from .kitti_io import KittiLayout, parse_calib, read_image, read_point_cloud, write_image
from .kvfile import format_kv

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
MANIFEST_NAME = "manifest.txt"


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def frame_seed(seed: int, frame_id: str) -> int:
    """Order-independent per-frame seed derived from the global seed."""
    return splitmix64(splitmix64(seed & MASK64) ^ int(frame_id))


@dataclass
class FrameResult:
    frame_id: str
    ok: bool
    reason: str = ""


class SynthesisIOError(RuntimeError):
    pass


def _frame_depth(layout: KittiLayout, fid: str, width: int, height: int, depth_source: str,
                 depth_dir: Optional[Path], max_radius: float, fill_value: float):
    if depth_source == "files":
        path = (Path(depth_dir) / f"{fid}.png") if depth_dir else layout.depth(fid)
        if not path.is_file():
            return None, f"missing depth {path.name}"
        depth = decode_depth(path.read_bytes(), context=str(path))
        if (depth.height, depth.width) != (height, width):
            return None, f"depth raster is {depth.width}x{depth.height}, image is {width}x{height}"
    else:
        calib_path, velo_path = layout.calib(fid), layout.velodyne(fid)
        if not calib_path.is_file():
            return None, "missing calib"
        if not velo_path.is_file():
            return None, "missing velodyne"
        calib = parse_calib(calib_path.read_text())
        cloud = read_point_cloud(velo_path.read_bytes())
        depth = project_lidar_to_depth(cloud, calib, width, height)
    if not depth.is_dense:
        depth = densify(depth, max_radius, fill_value)
    return depth, ""


def synthesize_frame(layout: KittiLayout, out: KittiLayout, fid: str, preset: dg.WeatherPreset,
                     seed: int, depth_source: str = "lidar", depth_dir=None,
                     max_radius: float = DEFAULT_MAX_RADIUS,
                     fill_value: float = DEFAULT_FILL_DEPTH) -> FrameResult:
    img_path = layout.image(fid)
    if not img_path.is_file():
        return FrameResult(fid, False, "missing image")
    image = read_image(img_path.read_bytes(), context=str(img_path))
    depth = None
    if preset.needs_depth:
        try:
            depth, reason = _frame_depth(layout, fid, image.width, image.height, depth_source,
                                         depth_dir, max_radius, fill_value)
        except ValueError as exc:
            return FrameResult(fid, False, f"bad depth input: {exc}")
        if depth is None:
            return FrameResult(fid, False, reason)
    result = dg.degrade(image, depth, preset, frame_seed(seed, fid))
    out.image(fid).write_bytes(write_image(result))
    for src, dst in ((layout.label(fid), out.label(fid)), (layout.calib(fid), out.calib(fid))):
        if src.is_file():
            shutil.copyfile(src, dst)
    return FrameResult(fid, True)


def synthesize_dataset(input_root, output_root, preset: dg.WeatherPreset, seed: int,
                       depth_source: str = "lidar", depth_dir=None, threads: int = 1,
                       max_radius: float = DEFAULT_MAX_RADIUS,
                       fill_value: float = DEFAULT_FILL_DEPTH) -> dict:
    """Degrade every frame of ``input_root`` and mirror the layout in ``output_root``.

    Returns the manifest as an ordered dict; it is also written to
    ``output_root/manifest.txt``. Frames lacking inputs are skipped and listed.
    """
    if depth_source not in ("lidar", "files"):
        raise ValueError(f"depth_source must be 'lidar' or 'files', got {depth_source!r}")
    layout = KittiLayout(input_root)
    if not (layout.root / layout.image_dir).is_dir():
        raise SynthesisIOError(f"{layout.root}: no {layout.image_dir}/ directory")
    out = KittiLayout(output_root)
    try:
        for sub in (out.image_dir, out.label_dir, out.calib_dir):
            (out.root / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SynthesisIOError(f"cannot create output tree under {out.root}: {exc}") from exc

    fids = layout.frame_ids()

    def work(fid):
        try:
            return synthesize_frame(layout, out, fid, preset, seed, depth_source, depth_dir,
                                    max_radius, fill_value)
        except OSError as exc:
            raise SynthesisIOError(f"frame {fid}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, fids))
    else:
        results = [work(fid) for fid in fids]

    skipped = [r for r in results if not r.ok]
    for r in skipped:
        log.warning("skipped frame %s: %s", r.frame_id, r.reason)

    manifest = [
        ("preset", preset.name),
        ("seed", seed),
        ("depth_source", depth_source if preset.needs_depth else "none"),
        ("frame_count", len(results) - len(skipped)),
        ("skipped_count", len(skipped)),
    ]
    if preset.needs_depth:
        manifest += [("densify.max_radius", float(max_radius)),
                     ("densify.fill_value", float(fill_value))]
    manifest += [(f"param.{k}", v) for k, v in dg.params_items(preset.params)]
    manifest += [(f"skipped.{r.frame_id}", r.reason) for r in skipped]
    try:
        (out.root / MANIFEST_NAME).write_text(format_kv(manifest))
    except OSError as exc:
        raise SynthesisIOError(f"cannot write manifest: {exc}") from exc
    return dict(manifest)

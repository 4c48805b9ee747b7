"""LiDAR-to-image depth maps, nearest-neighbour densification and the 16-bit
depth raster codec (meters * 256, 0 = missing)."""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .kitti_io import CameraCalibration, ImageDecodeError, PointCloud

MIN_CAMERA_DEPTH = 0.1
DEFAULT_FILL_DEPTH = 80.0
DEFAULT_MAX_RADIUS = 10.0
DEPTH_SCALE = 256.0


class DepthEncodingError(ValueError):
    pass


@dataclass(frozen=True)
class DepthMap:
    """H x W depth in meters; values <= 0 mark missing pixels."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {arr.shape}")
        # anything not strictly positive and finite counts as missing
        arr[~(np.isfinite(arr) & (arr > 0))] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def present(self) -> np.ndarray:
        return self.values > 0

    @property
    def is_dense(self) -> bool:
        return bool(np.all(self.values > 0))


def project_points(rect_xyz: np.ndarray, calib: CameraCalibration) -> tuple:
    """Sub-pixel image coordinates (u, v) of rectified-camera points."""
    hom = rect_xyz @ calib.p2[:, :3].T + calib.p2[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = hom[:, 0] / hom[:, 2]
        v = hom[:, 1] / hom[:, 2]
    return u, v


def unproject(u, v, depth, calib: CameraCalibration) -> np.ndarray:
    """Invert ``project_points`` given the rectified-camera z of each pixel.

    Solves ``s * [u, v, 1] = M X + p`` with the known ``X_z = depth``.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    depth = np.atleast_1d(np.asarray(depth, dtype=np.float64))
    m_inv = np.linalg.inv(calib.p2[:, :3])
    p = calib.p2[:, 3]
    uv1 = np.stack([u, v, np.ones_like(u)], axis=1)
    a = uv1 @ m_inv.T  # coefficient of s
    b = -(m_inv @ p)  # constant term
    s = (depth - b[2]) / a[:, 2]
    return a * s[:, None] + b


def project_lidar_to_depth(cloud: PointCloud | np.ndarray, calib: CameraCalibration,
                           width: int, height: int,
                           min_depth: float = MIN_CAMERA_DEPTH) -> DepthMap:
    """Sparse depth map from a LiDAR scan.

    Pixels are chosen by rounding the projected coordinate to the nearest
    integer. Collisions keep the smallest depth.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    depth = np.zeros((height, width), dtype=np.float64)
    if len(pts) == 0:
        return DepthMap(depth)
    rect = calib.velo_to_rect(np.asarray(pts, dtype=np.float64)[:, :3])
    z = rect[:, 2]
    front = z > min_depth
    rect, z = rect[front], z[front]
    u, v = project_points(rect, calib)
    col = np.floor(u + 0.5)
    row = np.floor(v + 0.5)
    inside = np.isfinite(col) & np.isfinite(row) & (col >= 0) & (col < width) & (row >= 0) & (row < height)
    flat = row[inside].astype(np.int64) * width + col[inside].astype(np.int64)
    buf = np.full(height * width, np.inf)
    np.minimum.at(buf, flat, z[inside])
    buf[~np.isfinite(buf)] = 0.0
    return DepthMap(buf.reshape(height, width))


def densify(sparse: DepthMap, max_radius: float = DEFAULT_MAX_RADIUS,
            fill_value: float = DEFAULT_FILL_DEPTH) -> DepthMap:
    """Nearest-neighbour fill of missing pixels.

    Ties between equidistant sources go to the smaller row, then the smaller
    column. Pixels with no source within ``max_radius`` get ``fill_value``.
    """
    if max_radius < 0:
        raise ValueError("max_radius must be >= 0")
    if not fill_value > 0:
        raise ValueError("fill_value must be > 0")
    return DepthMap(kernels.densify_nearest(sparse.values, float(max_radius), float(fill_value)))


def encode_depth(depth: DepthMap) -> bytes:
    """16-bit PNG, stored value = round(meters * 256), 0 = missing."""
    vals = depth.values
    scaled = np.floor(vals * DEPTH_SCALE + 0.5)
    if vals.size and scaled.max() > 65535:
        raise DepthEncodingError(f"depth {vals.max():.3f} m does not fit the 16-bit encoding (< 256 m)")
    stored = scaled.astype(np.uint16)
    # a present pixel must not quantize to the missing marker
    stored[(vals > 0) & (stored == 0)] = 1
    buf = io.BytesIO()
    Image.fromarray(stored).save(buf, format="PNG")
    return buf.getvalue()


def decode_depth(data: bytes, context: str = "<bytes>") -> DepthMap:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if img.mode not in ("I;16", "I;16B", "I"):
                raise ImageDecodeError(f"{context}: expected a 16-bit depth raster, got mode {img.mode}")
            raw = np.asarray(img).astype(np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"{context}: cannot decode depth raster ({exc})") from None
    if raw.ndim != 2:
        raise ImageDecodeError(f"{context}: depth raster must be single-channel")
    return DepthMap(raw / DEPTH_SCALE)

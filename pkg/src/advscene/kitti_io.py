"""Readers and writers for the KITTI object-detection on-disk formats.

Layout handled here::

    <root>/image_2/NNNNNN.png
    <root>/label_2/NNNNNN.txt
    <root>/calib/NNNNNN.txt
    <root>/velodyne/NNNNNN.bin
"""
from __future__ import annotations

import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

DONTCARE = "DontCare"
FRAME_ID_RE = re.compile(r"^\d{6}$")


class KittiFormatError(ValueError):
    """Malformed KITTI text or binary content."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class CameraCalibration:
    p2: np.ndarray
    r0_rect: np.ndarray
    tr_velo_to_cam: np.ndarray

    def __post_init__(self):
        for name, shape in (("p2", (3, 4)), ("r0_rect", (3, 3)), ("tr_velo_to_cam", (3, 4))):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.p2[0, 0] > 0 and self.p2[1, 1] > 0):
            raise ValueError("P2 focal lengths must be positive")
        gram = self.r0_rect @ self.r0_rect.T
        if np.max(np.abs(gram - np.eye(3))) > 1e-3:
            raise ValueError("R0_rect is not orthonormal")

    @classmethod
    def simple(cls, focal: float, cx: float, cy: float) -> "CameraCalibration":
        """Pinhole camera with identity rectification and extrinsics."""
        p2 = np.array([[focal, 0, cx, 0], [0, focal, cy, 0], [0, 0, 1, 0]], dtype=np.float64)
        return cls(p2, np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))

    def velo_to_rect(self, xyz: np.ndarray) -> np.ndarray:
        """Map (N, 3) LiDAR-frame points into the rectified camera frame."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        cam = xyz @ self.tr_velo_to_cam[:, :3].T + self.tr_velo_to_cam[:, 3]
        return cam @ self.r0_rect.T


@dataclass(frozen=True)
class ObjectLabel3D:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple
    dims: tuple  # (h, w, l)
    location: tuple  # (x, y, z), bottom-center in camera frame
    rotation_y: float
    score: Optional[float] = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONTCARE

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    def validate(self) -> None:
        """Raise ValueError if a non-DontCare record breaks the label invariants."""
        if self.is_dontcare:
            return
        left, top, right, bottom = self.bbox2d
        if not (right > left and bottom > top):
            raise ValueError(f"{self.class_name}: degenerate 2D box {self.bbox2d}")
        if not all(d > 0 for d in self.dims):
            raise ValueError(f"{self.class_name}: non-positive dimensions {self.dims}")
        if not -math.pi <= self.rotation_y <= math.pi:
            raise ValueError(f"{self.class_name}: rotation_y {self.rotation_y} outside [-pi, pi]")
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"{self.class_name}: truncation {self.truncation} outside [0, 1]")
        if self.occlusion not in (0, 1, 2, 3):
            raise ValueError(f"{self.class_name}: occlusion {self.occlusion} not in 0..3")


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 4): x, y, z, reflectance
    dropped: int = 0

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x 3 float image with values in [0, 1]."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image data must be H x W x 3, got shape {arr.shape}")
        if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _to_float(token: str, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise KittiFormatError(f"non-numeric {what} {token!r}", line) from None
    if not math.isfinite(value):
        raise KittiFormatError(f"non-finite {what} {token!r}", line)
    return value


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        try:
            return bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise KittiFormatError(f"not UTF-8 text ({exc.reason} at byte {exc.start})") from None
    return data


def parse_labels(text) -> list:
    """Parse label_2 / prediction text into ObjectLabel3D records.

    Lines carry 15 fields (ground truth) or 16 (prediction score appended).
    Blank lines are skipped; geometry is not validated here so that detector
    output with odd boxes can still be scored.
    """
    text = _as_text(text)
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) not in (15, 16):
            raise KittiFormatError(f"expected 15 or 16 fields, got {len(parts)}", lineno)
        nums = [_to_float(tok, lineno, f"field {i + 2}") for i, tok in enumerate(parts[1:])]
        occ = nums[1]
        if occ != int(occ):
            raise KittiFormatError(f"occlusion must be an integer, got {parts[2]!r}", lineno)
        records.append(
            ObjectLabel3D(
                class_name=parts[0],
                truncation=nums[0],
                occlusion=int(occ),
                alpha=nums[2],
                bbox2d=tuple(nums[3:7]),
                dims=tuple(nums[7:10]),
                location=tuple(nums[10:13]),
                rotation_y=nums[13],
                score=nums[14] if len(nums) == 15 else None,
            )
        )
    return records


def _fmt(value: float, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    # avoid "-0.00"
    if float(text) == 0.0:
        text = f"{0.0:.{decimals}f}"
    return text


def write_labels(records: Iterable[ObjectLabel3D], decimals: int = 2) -> str:
    lines = []
    for rec in records:
        rec.validate()
        fields = [
            rec.class_name,
            _fmt(rec.truncation, decimals),
            str(int(rec.occlusion)),
            _fmt(rec.alpha, decimals),
            *(_fmt(v, decimals) for v in rec.bbox2d),
            *(_fmt(v, decimals) for v in rec.dims),
            *(_fmt(v, decimals) for v in rec.location),
            _fmt(rec.rotation_y, decimals),
        ]
        if rec.score is not None:
            fields.append(_fmt(rec.score, decimals))
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


_CALIB_KEYS = {"P2": ("p2", 12, (3, 4)), "R0_rect": ("r0_rect", 9, (3, 3)),
               "Tr_velo_to_cam": ("tr_velo_to_cam", 12, (3, 4))}


def parse_calib(text) -> CameraCalibration:
    text = _as_text(text)
    found = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if ":" not in raw:
            continue
        key, _, rest = raw.partition(":")
        key = key.strip()
        if key not in _CALIB_KEYS:
            continue
        attr, count, shape = _CALIB_KEYS[key]
        tokens = rest.split()
        if len(tokens) != count:
            raise KittiFormatError(f"{key} expects {count} values, got {len(tokens)}", lineno)
        values = [_to_float(t, lineno, key) for t in tokens]
        found[attr] = np.array(values, dtype=np.float64).reshape(shape)
    for key, (attr, _, _) in _CALIB_KEYS.items():
        if attr not in found:
            raise KittiFormatError(f"missing required calibration key {key}")
    try:
        return CameraCalibration(**found)
    except ValueError as exc:
        raise KittiFormatError(str(exc)) from None


def read_point_cloud(data: bytes) -> PointCloud:
    """Decode a velodyne scan of packed little-endian float32 (x, y, z, r)."""
    if len(data) % 16:
        raise KittiFormatError(f"point cloud byte length {len(data)} is not a multiple of 16")
    pts = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    finite = np.all(np.isfinite(pts), axis=1)
    kept = pts[finite].astype(np.float32)
    return PointCloud(points=kept, dropped=int(len(pts) - len(kept)))


def write_point_cloud(cloud: PointCloud | np.ndarray) -> bytes:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    return np.ascontiguousarray(pts, dtype="<f4").reshape(-1, 4).tobytes()


def read_image(data: bytes, context: str = "<bytes>") -> ImageBuffer:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            if img.mode not in ("RGB", "RGBA", "L", "P"):
                raise ImageDecodeError(f"{context}: unsupported image mode {img.mode}")
            rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageDecodeError(f"{context}: cannot decode image ({exc})") from None
    return ImageBuffer(rgb.astype(np.float64) / 255.0)


def to_bytes8(data: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to uint8 with round-half-up."""
    return np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_image(image: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_bytes8(image.data), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class KittiLayout:
    """Paths inside a KITTI object split directory."""

    image_dir = "image_2"
    label_dir = "label_2"
    calib_dir = "calib"
    velodyne_dir = "velodyne"
    depth_dir = "depth"

    def __init__(self, root):
        self.root = Path(root)

    def image(self, frame_id: str) -> Path:
        return self.root / self.image_dir / f"{frame_id}.png"

    def label(self, frame_id: str) -> Path:
        return self.root / self.label_dir / f"{frame_id}.txt"

    def calib(self, frame_id: str) -> Path:
        return self.root / self.calib_dir / f"{frame_id}.txt"

    def velodyne(self, frame_id: str) -> Path:
        return self.root / self.velodyne_dir / f"{frame_id}.bin"

    def depth(self, frame_id: str) -> Path:
        return self.root / self.depth_dir / f"{frame_id}.png"

    def frame_ids(self) -> list:
        """Sorted 6-digit frame ids that have an image."""
        return list_frame_ids(self.root / self.image_dir, ".png")


def list_frame_ids(directory, suffix: str) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(p.stem for p in directory.iterdir()
                  if p.suffix == suffix and FRAME_ID_RE.match(p.stem))


def load_label_dir(directory) -> dict:
    """Map frame id to parsed labels for every NNNNNN.txt in ``directory``."""
    out = {}
    for fid in list_frame_ids(directory, ".txt"):
        path = Path(directory) / f"{fid}.txt"
        try:
            out[fid] = parse_labels(path.read_text())
        except KittiFormatError as exc:
            raise KittiFormatError(f"{path}: {exc}") from None
    return out

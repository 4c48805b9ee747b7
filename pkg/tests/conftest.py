import io

import numpy as np
import pytest
from PIL import Image

# KITTI-style axis swap: camera x = -velo y, camera y = -velo z, camera z = velo x
TR_VELO = np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])


def calib_text(focal=700.0, cx=None, cy=None, width=64, height=32):
    cx = width / 2.0 if cx is None else cx
    cy = height / 2.0 if cy is None else cy
    p2 = [focal, 0, cx, 0, 0, focal, cy, 0, 0, 0, 1, 0]
    rows = [
        "P0: " + " ".join(["0"] * 12),
        "P2: " + " ".join(f"{v:g}" for v in p2),
        "R0_rect: 1 0 0 0 1 0 0 0 1",
        "Tr_velo_to_cam: " + " ".join(f"{v:g}" for v in TR_VELO.ravel()),
    ]
    return "\n".join(rows) + "\n"


CAR_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"


def label_text(rng, n=3):
    lines = []
    for _ in range(n):
        left, top = rng.uniform(0, 20), rng.uniform(0, 5)
        h = rng.uniform(30, 60)
        x, z = rng.uniform(-5, 5), rng.uniform(5, 40)
        lines.append(f"Car 0.00 0 0.10 {left:.2f} {top:.2f} {left + 40:.2f} {top + h:.2f} "
                     f"1.50 1.60 3.90 {x:.2f} 1.70 {z:.2f} {rng.uniform(-3, 3):.2f}")
    lines.append("DontCare -1 -1 -10 1.00 1.00 5.00 5.00 -1 -1 -1 -1000 -1000 -1000 -10")
    return "\n".join(lines) + "\n"


def png_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def make_kitti_tree(root, n_frames=3, width=64, height=32, seed=0, n_points=4000):
    """Write a tiny but complete KITTI object split under ``root``."""
    rng = np.random.default_rng(seed)
    for sub in ("image_2", "label_2", "calib", "velodyne"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i in range(n_frames):
        fid = f"{i:06d}"
        img = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        (root / "image_2" / f"{fid}.png").write_bytes(png_bytes(img))
        (root / "label_2" / f"{fid}.txt").write_text(label_text(rng))
        (root / "calib" / f"{fid}.txt").write_text(calib_text(focal=0.8 * width, width=width,
                                                              height=height))
        fwd = rng.uniform(2.0, 60.0, n_points)
        pts = np.column_stack([fwd, rng.uniform(-0.6, 0.6, n_points) * fwd,
                               rng.uniform(-0.3, 0.3, n_points) * fwd,
                               rng.uniform(0, 1, n_points)]).astype("<f4")
        (root / "velodyne" / f"{fid}.bin").write_bytes(pts.tobytes())
    return root


@pytest.fixture
def kitti_tree(tmp_path):
    return make_kitti_tree(tmp_path / "kitti")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tree_digest(root):
    """Map relative path -> file bytes for a whole directory tree."""
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and the same floating-point operation order, so both backends return
bit-identical arrays.
"""
import math

import numpy as np

# streak table columns: cx, cy, sin(angle), cos(angle), length, width, intensity
STREAK_FIELDS = 7


def _overlap_1d(a, half):
    # length of [a - 0.5, a + 0.5] ∩ [-half, half]
    return np.maximum(np.minimum(a + 0.5, half) - np.maximum(a - 0.5, -half), 0.0)


def rasterize_streaks(layer, streaks):
    """Add anti-aliased streaks to ``layer`` in place.

    Coverage of a pixel is the product of its 1-D box-filter overlaps along
    and across the streak axis, so a streak fully inside the image deposits
    close to ``length * width * intensity``.
    """
    height, width = layer.shape
    for row in streaks:
        cx, cy, sn, cs, length, sw, intensity = (float(v) for v in row)
        hl = 0.5 * length
        hw = 0.5 * sw
        ex = hl * abs(sn) + hw * abs(cs) + 1.0
        ey = hl * abs(cs) + hw * abs(sn) + 1.0
        x0 = max(0, int(math.floor(cx - ex)))
        x1 = min(width - 1, int(math.ceil(cx + ex)))
        y0 = max(0, int(math.floor(cy - ey)))
        y1 = min(height - 1, int(math.ceil(cy + ey)))
        if x0 > x1 or y0 > y1:
            continue
        rx = np.arange(x0, x1 + 1, dtype=np.float64)[None, :] - cx
        ry = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - cy
        along = rx * sn + ry * cs
        across = rx * cs - ry * sn
        cov = intensity * _overlap_1d(along, hl) * _overlap_1d(across, hw)
        layer[y0 : y1 + 1, x0 : x1 + 1] += cov
    return layer


def _column_candidates(present):
    """Nearest present row in each column; ties go to the upper row."""
    height, width = present.shape
    rows = np.arange(height)[:, None]
    idx = np.where(present, rows, -1)
    up = np.maximum.accumulate(idx, axis=0)
    idx_dn = np.where(present, rows, height)
    down = np.minimum.accumulate(idx_dn[::-1], axis=0)[::-1]
    has_up = up >= 0
    has_down = down < height
    dist_up = np.where(has_up, rows - up, np.iinfo(np.int64).max)
    dist_down = np.where(has_down, down - rows, np.iinfo(np.int64).max)
    use_up = has_up & (dist_up <= dist_down)
    cand = np.where(use_up, up, np.where(has_down, down, -1))
    dy = np.where(use_up, dist_up, np.where(has_down, dist_down, 0))
    return cand.astype(np.int64), dy.astype(np.int64)


def densify_nearest(values, max_radius, fill_value):
    """Fill missing pixels (value <= 0) from the nearest present pixel.

    Distance is Euclidean in pixels; ties go to the smaller row, then the
    smaller column. Pixels with no present pixel within ``max_radius`` get
    ``fill_value``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    height, width = values.shape
    present = values > 0
    out = values.copy()
    missing = ~present
    if not missing.any():
        return out
    r2 = float(max_radius) * float(max_radius)
    limit = int(math.floor(max_radius))
    cand, dy = _column_candidates(present)

    big = np.iinfo(np.int64).max
    best_d2 = np.full((height, width), big, dtype=np.int64)
    best_row = np.full((height, width), -1, dtype=np.int64)
    best_col = np.full((height, width), -1, dtype=np.int64)
    cols = np.arange(width, dtype=np.int64)[None, :]

    for dx in range(0, min(limit, width - 1) + 1):
        pending = best_d2[missing]
        if pending.size and dx * dx > pending.max():
            break
        for sign in ((0,) if dx == 0 else (-1, 1)):
            off = sign * dx
            src_c = cols + off
            valid = (src_c >= 0) & (src_c < width)
            src_safe = np.clip(src_c, 0, width - 1)
            c_row = cand[:, src_safe[0]]
            c_dy = dy[:, src_safe[0]]
            ok = valid & (c_row >= 0) & missing
            d2 = dx * dx + c_dy * c_dy
            better = ok & (
                (d2 < best_d2)
                | (
                    (d2 == best_d2)
                    & ((c_row < best_row) | ((c_row == best_row) & (src_c < best_col)))
                )
            )
            best_d2 = np.where(better, d2, best_d2)
            best_row = np.where(better, c_row, best_row)
            best_col = np.where(better, np.broadcast_to(src_c, better.shape), best_col)

    hit = missing & (best_row >= 0) & (best_d2.astype(np.float64) <= r2)
    out[hit] = values[best_row[hit], best_col[hit]]
    out[missing & ~hit] = fill_value
    return out


def _clip_area(px, py, qx, qy):
    # Sutherland-Hodgman of p against the half-planes of CCW q, then shoelace
    xs = list(px)
    ys = list(py)
    m = len(qx)
    for j in range(m):
        ax, ay = qx[j - 1], qy[j - 1]
        bx, by = qx[j], qy[j]
        ex = bx - ax
        ey = by - ay
        n = len(xs)
        if n == 0:
            return 0.0
        side = [ex * (ys[i] - ay) - ey * (xs[i] - ax) for i in range(n)]
        nx, ny = [], []
        for i in range(n):
            k = i - 1 if i > 0 else n - 1
            sc = side[i]
            sp = side[k]
            if sc >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sc)
                    nx.append(xs[k] + t * (xs[i] - xs[k]))
                    ny.append(ys[k] + t * (ys[i] - ys[k]))
                nx.append(xs[i])
                ny.append(ys[i])
            elif sp >= 0.0:
                t = sp / (sp - sc)
                nx.append(xs[k] + t * (xs[i] - xs[k]))
                ny.append(ys[k] + t * (ys[i] - ys[k]))
        xs, ys = nx, ny
    n = len(xs)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        k = i + 1 if i + 1 < n else 0
        acc += xs[i] * ys[k] - xs[k] * ys[i]
    return abs(acc) * 0.5


def _disjoint_bounds(px, py, qx, qy):
    return (
        max(px) <= min(qx)
        or max(qx) <= min(px)
        or max(py) <= min(qy)
        or max(qy) <= min(py)
    )


def convex_clip_area(p, q):
    """Intersection area of convex CCW polygons ``p`` (n, 2) and ``q`` (m, 2)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) < 3 or len(q) < 3:
        return 0.0
    px, py = p[:, 0].tolist(), p[:, 1].tolist()
    qx, qy = q[:, 0].tolist(), q[:, 1].tolist()
    if _disjoint_bounds(px, py, qx, qy):
        return 0.0
    return _clip_area(px, py, qx, qy)


def quad_overlap_matrix(a, b):
    """Pairwise intersection areas between CCW quads ``a`` (N, 4, 2) and ``b`` (M, 4, 2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    for i in range(a.shape[0]):
        px, py = a[i, :, 0].tolist(), a[i, :, 1].tolist()
        for j in range(b.shape[0]):
            qx, qy = b[j, :, 0].tolist(), b[j, :, 1].tolist()
            if _disjoint_bounds(px, py, qx, qy):
                continue
            out[i, j] = _clip_area(px, py, qx, qy)
    return out

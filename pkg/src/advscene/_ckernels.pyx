# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Mirror of ``_kernels_py``; operation order is kept identical so both
backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, floor, ceil, fmin, fmax
from libc.stdlib cimport malloc, free
from libc.stdint cimport int64_t

cnp.import_array()

STREAK_FIELDS = 7


cdef inline double _overlap_1d(double a, double half) noexcept nogil:
    return fmax(fmin(a + 0.5, half) - fmax(a - 0.5, -half), 0.0)


def rasterize_streaks(double[:, ::1] layer, streaks):
    cdef const double[:, ::1] s = np.ascontiguousarray(streaks, dtype=np.float64).reshape(-1, 7)
    cdef Py_ssize_t height = layer.shape[0]
    cdef Py_ssize_t width = layer.shape[1]
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t k, x, y, x0, x1, y0, y1
    cdef double cx, cy, sn, cs, hl, hw, intensity, ex, ey, rx, ry, along, across, cov
    with nogil:
        for k in range(n):
            cx = s[k, 0]
            cy = s[k, 1]
            sn = s[k, 2]
            cs = s[k, 3]
            hl = 0.5 * s[k, 4]
            hw = 0.5 * s[k, 5]
            intensity = s[k, 6]
            ex = hl * fabs(sn) + hw * fabs(cs) + 1.0
            ey = hl * fabs(cs) + hw * fabs(sn) + 1.0
            x0 = <Py_ssize_t>floor(cx - ex)
            if x0 < 0:
                x0 = 0
            x1 = <Py_ssize_t>ceil(cx + ex)
            if x1 > width - 1:
                x1 = width - 1
            y0 = <Py_ssize_t>floor(cy - ey)
            if y0 < 0:
                y0 = 0
            y1 = <Py_ssize_t>ceil(cy + ey)
            if y1 > height - 1:
                y1 = height - 1
            for y in range(y0, y1 + 1):
                ry = <double>y - cy
                for x in range(x0, x1 + 1):
                    rx = <double>x - cx
                    along = rx * sn + ry * cs
                    across = rx * cs - ry * sn
                    cov = intensity * _overlap_1d(along, hl) * _overlap_1d(across, hw)
                    layer[y, x] += cov
    return np.asarray(layer)


def densify_nearest(values, double max_radius, double fill_value):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t height = v.shape[0]
    cdef Py_ssize_t width = v.shape[1]
    out_arr = np.array(v, dtype=np.float64, copy=True)
    cdef double[:, ::1] out = out_arr
    cand_arr = np.full((height, width), -1, dtype=np.int64)
    dy_arr = np.zeros((height, width), dtype=np.int64)
    cdef int64_t[:, ::1] cand = cand_arr
    cdef int64_t[:, ::1] dy = dy_arr
    cdef Py_ssize_t r, c, cc, dx, limit, sgn
    cdef int64_t last, d2, best_d2, best_row, best_col, row, du, dd
    cdef double r2 = max_radius * max_radius
    cdef bint any_missing = False

    limit = <Py_ssize_t>floor(max_radius)
    if limit > width - 1:
        limit = width - 1

    with nogil:
        # nearest present row per column, ties to the upper row
        for c in range(width):
            last = -1
            for r in range(height):
                if v[r, c] > 0:
                    last = r
                cand[r, c] = last
                if last >= 0:
                    dy[r, c] = r - last
            last = -1
            for r in range(height - 1, -1, -1):
                if v[r, c] > 0:
                    last = r
                else:
                    any_missing = True
                if last >= 0:
                    dd = last - r
                    if cand[r, c] < 0 or dd < dy[r, c]:
                        cand[r, c] = last
                        dy[r, c] = dd

        if any_missing:
            for r in range(height):
                for c in range(width):
                    if v[r, c] > 0:
                        continue
                    best_d2 = -1
                    best_row = -1
                    best_col = -1
                    for dx in range(0, limit + 1):
                        if best_d2 >= 0 and dx * dx > best_d2:
                            break
                        for sgn in range(-1, 2, 2):
                            if dx == 0 and sgn == 1:
                                break
                            cc = c + sgn * dx
                            if cc < 0 or cc >= width:
                                continue
                            row = cand[r, cc]
                            if row < 0:
                                continue
                            d2 = dx * dx + dy[r, cc] * dy[r, cc]
                            if (best_d2 < 0 or d2 < best_d2 or
                                    (d2 == best_d2 and (row < best_row or
                                                        (row == best_row and cc < best_col)))):
                                best_d2 = d2
                                best_row = row
                                best_col = cc
                    if best_row >= 0 and <double>best_d2 <= r2:
                        out[r, c] = v[best_row, best_col]
                    else:
                        out[r, c] = fill_value
    return out_arr


cdef double _clip_area(double* px, double* py, Py_ssize_t n,
                       double* qx, double* qy, Py_ssize_t m,
                       double* bufx, double* bufy, double* side) noexcept nogil:
    # bufx/bufy hold two ping-pong polygons of capacity n + m each
    cdef Py_ssize_t cap = n + m
    cdef double* xs = bufx
    cdef double* ys = bufy
    cdef double* nx = bufx + cap
    cdef double* ny = bufy + cap
    cdef double* tmp
    cdef Py_ssize_t i, j, k, cnt, nn
    cdef double ax, ay, bx, by, ex, ey, sc, sp, t, acc
    for i in range(n):
        xs[i] = px[i]
        ys[i] = py[i]
    cnt = n
    for j in range(m):
        if j == 0:
            ax = qx[m - 1]
            ay = qy[m - 1]
        else:
            ax = qx[j - 1]
            ay = qy[j - 1]
        bx = qx[j]
        by = qy[j]
        ex = bx - ax
        ey = by - ay
        if cnt == 0:
            return 0.0
        for i in range(cnt):
            side[i] = ex * (ys[i] - ay) - ey * (xs[i] - ax)
        nn = 0
        for i in range(cnt):
            k = i - 1 if i > 0 else cnt - 1
            sc = side[i]
            sp = side[k]
            if sc >= 0.0:
                if sp < 0.0:
                    t = sp / (sp - sc)
                    nx[nn] = xs[k] + t * (xs[i] - xs[k])
                    ny[nn] = ys[k] + t * (ys[i] - ys[k])
                    nn += 1
                nx[nn] = xs[i]
                ny[nn] = ys[i]
                nn += 1
            elif sp >= 0.0:
                t = sp / (sp - sc)
                nx[nn] = xs[k] + t * (xs[i] - xs[k])
                ny[nn] = ys[k] + t * (ys[i] - ys[k])
                nn += 1
        tmp = xs
        xs = nx
        nx = tmp
        tmp = ys
        ys = ny
        ny = tmp
        cnt = nn
    if cnt < 3:
        return 0.0
    acc = 0.0
    for i in range(cnt):
        k = i + 1 if i + 1 < cnt else 0
        acc += xs[i] * ys[k] - xs[k] * ys[i]
    return fabs(acc) * 0.5


cdef bint _disjoint(double* px, double* py, Py_ssize_t n,
                    double* qx, double* qy, Py_ssize_t m) noexcept nogil:
    cdef double pminx = px[0], pmaxx = px[0], pminy = py[0], pmaxy = py[0]
    cdef double qminx = qx[0], qmaxx = qx[0], qminy = qy[0], qmaxy = qy[0]
    cdef Py_ssize_t i
    for i in range(1, n):
        pminx = fmin(pminx, px[i])
        pmaxx = fmax(pmaxx, px[i])
        pminy = fmin(pminy, py[i])
        pmaxy = fmax(pmaxy, py[i])
    for i in range(1, m):
        qminx = fmin(qminx, qx[i])
        qmaxx = fmax(qmaxx, qx[i])
        qminy = fmin(qminy, qy[i])
        qmaxy = fmax(qmaxy, qy[i])
    return pmaxx <= qminx or qmaxx <= pminx or pmaxy <= qminy or qmaxy <= pminy


def convex_clip_area(p, q):
    cdef const double[:, ::1] pa = np.ascontiguousarray(p, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] qa = np.ascontiguousarray(q, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n = pa.shape[0]
    cdef Py_ssize_t m = qa.shape[0]
    if n < 3 or m < 3:
        return 0.0
    px = np.ascontiguousarray(pa[:, 0])
    py = np.ascontiguousarray(pa[:, 1])
    qx = np.ascontiguousarray(qa[:, 0])
    qy = np.ascontiguousarray(qa[:, 1])
    cdef double[::1] vpx = px, vpy = py, vqx = qx, vqy = qy
    cdef Py_ssize_t cap = n + m
    cdef double* bufx = <double*>malloc(2 * cap * sizeof(double))
    cdef double* bufy = <double*>malloc(2 * cap * sizeof(double))
    cdef double* side = <double*>malloc(cap * sizeof(double))
    cdef double area = 0.0
    if bufx == NULL or bufy == NULL or side == NULL:
        free(bufx)
        free(bufy)
        free(side)
        raise MemoryError()
    try:
        if not _disjoint(&vpx[0], &vpy[0], n, &vqx[0], &vqy[0], m):
            area = _clip_area(&vpx[0], &vpy[0], n, &vqx[0], &vqy[0], m, bufx, bufy, side)
    finally:
        free(bufx)
        free(bufy)
        free(side)
    return area


def quad_overlap_matrix(a, b):
    cdef const double[:, :, ::1] qa = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4, 2)
    cdef const double[:, :, ::1] qb = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4, 2)
    cdef Py_ssize_t na = qa.shape[0]
    cdef Py_ssize_t nb = qb.shape[0]
    out_arr = np.zeros((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double px[4]
    cdef double py[4]
    cdef double qx[4]
    cdef double qy[4]
    cdef double bufx[16]
    cdef double bufy[16]
    cdef double side[8]
    cdef Py_ssize_t i, j, k
    with nogil:
        for i in range(na):
            for k in range(4):
                px[k] = qa[i, k, 0]
                py[k] = qa[i, k, 1]
            for j in range(nb):
                for k in range(4):
                    qx[k] = qb[j, k, 0]
                    qy[k] = qb[j, k, 1]
                if _disjoint(px, py, 4, qx, qy, 4):
                    continue
                out[i, j] = _clip_area(px, py, 4, qx, qy, 4, bufx, bufy, side)
    return out_arr

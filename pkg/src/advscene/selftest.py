"""Runtime invariant checks for the twin-depth and attention kernels."""
from __future__ import annotations

import math

import numpy as np

from . import attention as at
from . import twin_depth as td


def _check_fusion(rng):
    for _ in range(1000):
        a = td.LaplaceDepth(rng.uniform(-50, 50), rng.uniform(1e-3, 10))
        b = td.LaplaceDepth(rng.uniform(-50, 50), rng.uniform(1e-3, 10))
        ab, ba = td.fuse(a, b), td.fuse(b, a)
        if ab != ba:
            return False, "fuse is not commutative"
        if ab.uncertainty < max(a.uncertainty, b.uncertainty):
            return False, "fused uncertainty below an input uncertainty"
        ref = math.sqrt(a.uncertainty ** 2 + b.uncertainty ** 2)
        if abs(ab.uncertainty - ref) > 1e-12 or ab.depth != a.depth + b.depth:
            return False, "fused pair differs from sum / root-sum-square"
    if td.fuse(td.LaplaceDepth(2, 3), td.LaplaceDepth(5, 4)) != td.LaplaceDepth(7, 5):
        return False, "3-4-5 case"
    return True, "1000 random pairs"


def _check_loss_gradients(rng):
    worst = 0.0
    h = 1e-6
    for _ in range(1000):
        gt = rng.uniform(1, 60)
        d = gt + rng.choice([-1, 1]) * rng.uniform(0.05, 10)
        u = rng.uniform(0.2, 5)
        _, gd, gu = td.instance_depth_loss(td.LaplaceDepth(d, u), gt)
        fd = (td.instance_depth_loss(td.LaplaceDepth(d + h, u), gt)[0]
              - td.instance_depth_loss(td.LaplaceDepth(d - h, u), gt)[0]) / (2 * h)
        fu = (td.instance_depth_loss(td.LaplaceDepth(d, u + h), gt)[0]
              - td.instance_depth_loss(td.LaplaceDepth(d, u - h), gt)[0]) / (2 * h)
        worst = max(worst, abs(gd - fd) / max(abs(fd), 1e-3), abs(gu - fu) / max(abs(fu), 1e-3))
    return worst < 1e-5, f"max relative error {worst:.2e}"


def _check_smooth_l1(rng):
    for e in rng.uniform(-5, 5, 1000):
        v, g = td.smooth_l1(float(e))
        if v < 0 or (v == 0) != (e == 0):
            return False, f"value sign at {e}"
    left, right = td.smooth_l1(1.0 - 1e-12), td.smooth_l1(1.0)
    if abs(left[0] - right[0]) > 1e-9 or abs(left[1] - right[1]) > 1e-9:
        return False, "discontinuous at |e| = 1"
    return True, "non-negative, continuous at the seam"


def _check_window_roundtrip(rng):
    for _ in range(50):
        m = int(rng.integers(1, 5))
        h, w = m * int(rng.integers(1, 4)), m * int(rng.integers(1, 4))
        spec = at.WindowSpec(m, int(rng.integers(0, m)))
        x = rng.normal(size=(h, w, 3))
        if not np.array_equal(at.window_reverse(at.window_partition(x, spec), spec, (h, w)), x):
            return False, f"round trip failed for {h}x{w}, {spec}"
    return True, "50 random (dims, M, shift)"


def _check_softmax_rows(rng):
    q, k = rng.normal(size=(2, 3, 16, 4)), rng.normal(size=(2, 3, 16, 4))
    bias = rng.normal(size=(3, 16, 16))
    sums = at.attention_weights(q, k, bias).sum(axis=-1)
    err = float(np.max(np.abs(sums - 1.0)))
    return err < 1e-6, f"max row-sum error {err:.1e}"


def _check_layer_norm(rng):
    y = at.layer_norm(rng.normal(3.0, 2.0, size=(64, 8)))
    err = max(float(np.max(np.abs(y.mean(-1)))), float(np.max(np.abs(y.var(-1) - 1.0))))
    return err < 1e-6, f"max mean/variance error {err:.1e}"


def _check_zero_block_identity(rng):
    c, m = 8, 4
    x = rng.normal(size=(8, 8, c))
    z = np.zeros((c, c))
    attn = at.AttentionParams(2, z, z, z, z, bias_table=np.zeros(((2 * m - 1) ** 2, 2)))
    blk = at.BlockParams(np.ones(c), np.zeros(c), np.ones(c), np.zeros(c),
                         np.zeros((c, 4 * c)), np.zeros(4 * c), np.zeros((4 * c, c)), np.zeros(c))
    y = at.swin_block_pair(x, (attn, attn), (blk, blk), m)
    return bool(np.array_equal(x, y)), "zero sub-module weights give the identity"


CHECKS = [
    ("twin_depth.fuse", _check_fusion),
    ("twin_depth.instance_depth_loss.gradients", _check_loss_gradients),
    ("twin_depth.smooth_l1", _check_smooth_l1),
    ("attention.window_roundtrip", _check_window_roundtrip),
    ("attention.softmax_rows", _check_softmax_rows),
    ("attention.layer_norm", _check_layer_norm),
    ("attention.zero_block_identity", _check_zero_block_identity),
]


def run_selftest(seed: int = 0) -> list:
    """Run every check; returns ``(name, passed, detail)`` tuples."""
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # report, don't abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results

"""Laplace twin-depth fusion, depth-target decoupling and the loss kernels.

Instance depth is modelled as the sum of an object-local residual and a
scene-level depth, each Laplace distributed; uncertainties combine by
root-sum-square.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class LaplaceDepth:
    depth: float
    uncertainty: float

    def __post_init__(self):
        if not math.isfinite(self.depth):
            raise ValueError(f"depth must be finite, got {self.depth}")
        if not (self.uncertainty > 0 and math.isfinite(self.uncertainty)):
            raise ValueError(f"uncertainty must be a positive finite number, got {self.uncertainty}")


@dataclass(frozen=True)
class LossBreakdown:
    l_h: float = 0.0
    l_o2d: float = 0.0
    l_s2d: float = 0.0
    l_s3d: float = 0.0
    l_theta: float = 0.0
    l_o3d: float = 0.0
    l_dins: float = 0.0  # may be negative through its log term

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"{f.name} is not finite: {value}")
            if f.name != "l_dins" and value < 0:
                raise ValueError(f"{f.name} must be >= 0, got {value}")


def fuse(obj: LaplaceDepth, sce: LaplaceDepth) -> LaplaceDepth:
    return LaplaceDepth(obj.depth + sce.depth, math.hypot(obj.uncertainty, sce.uncertainty))


def split_depth_targets(instance_gt: float, scene_gt: float) -> float:
    """Object-depth target: instance depth minus scene depth."""
    if not (math.isfinite(instance_gt) and math.isfinite(scene_gt)):
        raise ValueError("depth targets must be finite")
    return instance_gt - scene_gt


def _sign(x: float) -> float:
    x = float(x)
    return float((x > 0) - (x < 0))


def smooth_l1(e: float) -> tuple:
    """Return (value, d value / d e)."""
    if abs(e) < 1.0:
        return 0.5 * e * e, e
    return abs(e) - 0.5, _sign(e)


def instance_depth_loss(pred: LaplaceDepth, gt: float) -> tuple:
    """Laplace NLL-style loss sqrt(2)/u * |d - gt| + log(u).

    Returns ``(value, d/d depth, d/d uncertainty)``. The subgradient at
    ``d == gt`` uses sign(0) = 0.
    """
    u = pred.uncertainty
    if not u > 0:
        raise ValueError("uncertainty must be > 0")
    err = pred.depth - gt
    abs_err = abs(err)
    value = SQRT2 / u * abs_err + math.log(u)
    d_depth = SQRT2 / u * _sign(err)
    d_unc = -SQRT2 / (u * u) * abs_err + 1.0 / u
    return value, d_depth, d_unc


def total_loss(parts: LossBreakdown) -> float:
    # every term carries weight 1.0
    total = 0.0
    for f in fields(parts):
        value = getattr(parts, f.name)
        if not math.isfinite(value):
            raise ValueError(f"{f.name} is not finite: {value}")
        total += value
    return total

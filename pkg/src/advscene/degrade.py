"""Physically-motivated image degradations: fog, rain with fog coupling, and
gamma low light, plus the seven named weather presets."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import kernels
from .depth import DepthMap
from .kitti_io import ImageBuffer, to_bytes8


def _rgb(value) -> tuple:
    if np.isscalar(value):
        value = (value,) * 3
    vals = tuple(float(v) for v in value)
    if len(vals) != 3:
        raise ValueError(f"expected 3 channel values, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class FogParams:
    beta: float = 0.1  # 1/m
    atmospheric_light: tuple = (0.85, 0.85, 0.85)

    def __post_init__(self):
        object.__setattr__(self, "atmospheric_light", _rgb(self.atmospheric_light))
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not all(0.0 <= a <= 1.0 for a in self.atmospheric_light):
            raise ValueError("atmospheric_light values must lie in [0, 1]")


@dataclass(frozen=True)
class RainParams:
    n_layers: int = 2
    streaks_per_layer: int = 400
    angle_mean: float = 0.15  # radians from vertical
    angle_std: float = 0.05
    length_range: tuple = (12.0, 36.0)  # pixels
    width_range: tuple = (1.0, 2.0)
    intensity_range: tuple = (0.10, 0.30)
    fog_coupling: FogParams = field(default_factory=lambda: FogParams(beta=0.02))

    def __post_init__(self):
        if self.n_layers < 0 or self.streaks_per_layer < 0:
            raise ValueError("n_layers and streaks_per_layer must be >= 0")
        if self.angle_std < 0:
            raise ValueError("angle_std must be >= 0")
        for name in ("length_range", "width_range", "intensity_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy min <= max, got {(lo, hi)}")
            if lo < 0:
                raise ValueError(f"{name} must be non-negative")
            object.__setattr__(self, name, (lo, hi))
        lo, hi = self.intensity_range
        if hi > 1.0:
            raise ValueError("intensity_range must lie in [0, 1]")


@dataclass(frozen=True)
class LowLightParams:
    gamma: float = 2.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


Params = Union[FogParams, RainParams, LowLightParams]


@dataclass(frozen=True)
class WeatherPreset:
    name: str
    params: Params

    @property
    def needs_depth(self) -> bool:
        return not isinstance(self.params, LowLightParams)


_A = (0.85, 0.85, 0.85)

PRESETS = {
    "mod_fog": WeatherPreset("mod_fog", FogParams(0.05, _A)),
    "thick_fog": WeatherPreset("thick_fog", FogParams(0.10, _A)),
    "dense_fog": WeatherPreset("dense_fog", FogParams(0.20, _A)),
    "mod_rain": WeatherPreset("mod_rain", RainParams(n_layers=2, streaks_per_layer=400,
                                                     fog_coupling=FogParams(0.02, _A))),
    "heavy_rain": WeatherPreset("heavy_rain", RainParams(n_layers=3, streaks_per_layer=800,
                                                         fog_coupling=FogParams(0.03, _A))),
    "dense_rain": WeatherPreset("dense_rain", RainParams(n_layers=4, streaks_per_layer=1500,
                                                         fog_coupling=FogParams(0.05, _A))),
    "low_light": WeatherPreset("low_light", LowLightParams(2.5)),
}


def get_preset(name: str) -> WeatherPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


def _require_dense(depth: DepthMap):
    if not depth.is_dense:
        raise ValueError("depth map has missing pixels; densify it first")


def _check_dims(image: ImageBuffer, depth: DepthMap):
    if (image.height, image.width) != (depth.height, depth.width):
        raise ValueError(f"image is {image.height}x{image.width} but depth is {depth.height}x{depth.width}")


def transmission(depth: DepthMap, beta: float) -> np.ndarray:
    """Per-pixel transmission exp(-beta * depth)."""
    if not beta >= 0:
        raise ValueError("beta must be >= 0")
    _require_dense(depth)
    return np.exp(-beta * depth.values)


def compose_fog(background: np.ndarray, trans: np.ndarray, atmospheric_light) -> np.ndarray:
    a = np.asarray(_rgb(atmospheric_light))
    t = trans[..., None]
    return np.clip(background * t + a * (1.0 - t), 0.0, 1.0)


def apply_fog(image: ImageBuffer, depth: DepthMap, params: FogParams) -> ImageBuffer:
    _check_dims(image, depth)
    trans = transmission(depth, params.beta)
    return ImageBuffer(compose_fog(image.data, trans, params.atmospheric_light))


def sample_streaks(width: int, height: int, params: RainParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one layer of streak parameters as a (n, 7) table.

    Columns are cx, cy, sin(angle), cos(angle), length, width, intensity with
    the angle measured from the image's vertical axis.
    """
    n = params.streaks_per_layer
    cx = rng.uniform(0.0, width, n)
    cy = rng.uniform(0.0, height, n)
    angle = rng.normal(params.angle_mean, params.angle_std, n)
    length = rng.uniform(*params.length_range, n)
    sw = rng.uniform(*params.width_range, n)
    intensity = rng.uniform(*params.intensity_range, n)
    return np.column_stack([cx, cy, np.sin(angle), np.cos(angle), length, sw, intensity])


def rasterize_streak(layer: np.ndarray, cx: float, cy: float, angle: float,
                     length: float, width: float, intensity: float) -> np.ndarray:
    """Add a single anti-aliased streak to ``layer`` in place."""
    row = np.array([[cx, cy, math.sin(angle), math.cos(angle), length, width, intensity]])
    return kernels.rasterize_streaks(layer, row)


def render_rain_layers(width: int, height: int, params: RainParams, seed: int) -> list:
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(params.n_layers):
        layer = np.zeros((height, width), dtype=np.float64)
        streaks = sample_streaks(width, height, params, rng)
        if len(streaks):
            kernels.rasterize_streaks(layer, streaks)
        layers.append(layer)
    return layers


def compose_rain(background: np.ndarray, trans: np.ndarray, layers, atmospheric_light) -> np.ndarray:
    """clamp(T * (B + sum R_i) + (1 - T) * A); layers broadcast across channels."""
    streaks = np.zeros(background.shape[:2], dtype=np.float64)
    for layer in layers:
        streaks = streaks + layer
    a = np.asarray(_rgb(atmospheric_light))
    t = trans[..., None]
    return np.clip(t * (background + streaks[..., None]) + (1.0 - t) * a, 0.0, 1.0)


def apply_rain(image: ImageBuffer, depth: DepthMap, params: RainParams, seed: int) -> ImageBuffer:
    _check_dims(image, depth)
    trans = transmission(depth, params.fog_coupling.beta)
    layers = render_rain_layers(image.width, image.height, params, seed)
    return ImageBuffer(compose_rain(image.data, trans, layers, params.fog_coupling.atmospheric_light))


def gamma_lut(gamma: float) -> np.ndarray:
    """256-entry table mapping byte v to round(255 * (v / 255) ** gamma)."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    v = np.arange(256, dtype=np.float64) / 255.0
    return np.floor(255.0 * v ** gamma + 0.5).astype(np.uint8)


def apply_low_light(image: ImageBuffer, params: LowLightParams) -> ImageBuffer:
    lut = gamma_lut(params.gamma)
    return ImageBuffer(lut[to_bytes8(image.data)].astype(np.float64) / 255.0)


def degrade(image: ImageBuffer, depth: DepthMap | None, preset: WeatherPreset, seed: int) -> ImageBuffer:
    params = preset.params
    if isinstance(params, LowLightParams):
        return apply_low_light(image, params)
    if depth is None:
        raise ValueError(f"preset {preset.name} needs a depth map")
    if isinstance(params, FogParams):
        return apply_fog(image, depth, params)
    return apply_rain(image, depth, params, seed)


def params_items(params: Params, prefix: str = "") -> list:
    """Flatten parameters into ordered ``(dotted_key, value)`` pairs."""
    items = []
    for f in dataclasses.fields(params):
        value = getattr(params, f.name)
        if dataclasses.is_dataclass(value):
            items.extend(params_items(value, f"{prefix}{f.name}."))
        else:
            items.append((prefix + f.name, value))
    return items


def _coerce(current, text: str, key: str):
    try:
        if isinstance(current, bool):
            raise TypeError
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            vals = tuple(float(t) for t in text.replace(",", " ").split())
            if len(vals) == 1 and len(current) == 3:
                vals = vals * 3
            if len(vals) != len(current):
                raise ValueError(f"expected {len(current)} values")
            return vals
    except (TypeError, ValueError) as exc:
        raise ValueError(f"bad value for {key!r}: {text!r} ({exc})") from None
    raise ValueError(f"parameter {key!r} cannot be overridden")


def with_overrides(params: Params, overrides: dict) -> Params:
    """Return ``params`` with dotted-key string overrides applied."""
    known = dict(params_items(params))
    nested = {}
    flat = {}
    for key, text in overrides.items():
        if key not in known:
            raise ValueError(f"unknown parameter {key!r} for {type(params).__name__}; "
                             f"known: {', '.join(known)}")
        head, _, rest = key.partition(".")
        if rest:
            nested.setdefault(head, {})[rest] = text
        else:
            flat[head] = _coerce(known[key], text, key)
    for head, sub in nested.items():
        flat[head] = with_overrides(getattr(params, head), sub)
    return dataclasses.replace(params, **flat)

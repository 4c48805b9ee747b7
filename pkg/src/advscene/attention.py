"""Forward-only kernels for windowed multi-head attention.

Feature maps are ``(H, W, C)`` float arrays. Self-attention inside a window
uses a learned relative position bias indexed by the clipped offset between
two tokens; shifted windows use a cyclic roll with no cross-boundary mask.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from .tensorfile import dump_tensors, load_tensors

LN_EPS = 1e-12


@dataclass(frozen=True)
class WindowSpec:
    window_size: int
    shift: int = 0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if not 0 <= self.shift < self.window_size:
            raise ValueError(f"shift must satisfy 0 <= shift < {self.window_size}, got {self.shift}")

    @classmethod
    def shifted(cls, window_size: int) -> "WindowSpec":
        return cls(window_size, window_size // 2)

    def check(self, height: int, width: int):
        m = self.window_size
        if height % m or width % m:
            raise ValueError(f"window size {m} does not divide feature map {height}x{width}")


@dataclass
class AttentionParams:
    """Projection weights (x @ W convention), bias table and head weights."""

    heads: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    bias_table: Optional[np.ndarray] = None  # ((2M-1)^2, heads)
    head_weights: Optional[np.ndarray] = None  # (heads,)

    def __post_init__(self):
        c = np.shape(self.wq)[0]
        for name in ("wq", "wk", "wv", "wo"):
            w = np.asarray(getattr(self, name), dtype=np.float64)
            if w.shape != (c, c):
                raise ValueError(f"{name} must be {c}x{c}, got {w.shape}")
            setattr(self, name, w)
        if self.heads < 1 or c % self.heads:
            raise ValueError(f"channels {c} not divisible by heads {self.heads}")
        if self.head_weights is None:
            self.head_weights = np.ones(self.heads)
        self.head_weights = np.asarray(self.head_weights, dtype=np.float64).reshape(self.heads)
        if self.bias_table is not None:
            table = np.asarray(self.bias_table, dtype=np.float64)
            side = int(round(np.sqrt(table.shape[0])))
            if table.ndim != 2 or table.shape[1] != self.heads or side * side != table.shape[0] or side % 2 == 0:
                raise ValueError(f"bias table must be ((2M-1)^2, heads), got {table.shape}")
            self.bias_table = table

    @property
    def channels(self) -> int:
        return self.wq.shape[0]

    @property
    def window_size(self) -> Optional[int]:
        if self.bias_table is None:
            return None
        return (int(round(np.sqrt(self.bias_table.shape[0]))) + 1) // 2

    @classmethod
    def init(cls, channels: int, heads: int, window_size: Optional[int] = None,
             seed: int = 0, std: float = 0.02) -> "AttentionParams":
        rng = np.random.default_rng(seed)
        ws = [rng.normal(0.0, std, (channels, channels)) for _ in range(4)]
        table = None
        if window_size is not None:
            table = rng.normal(0.0, std, ((2 * window_size - 1) ** 2, heads))
        return cls(heads, *ws, bias_table=table)

    def to_tensors(self, prefix: str = "") -> dict:
        out = {f"{prefix}wq": self.wq, f"{prefix}wk": self.wk, f"{prefix}wv": self.wv,
               f"{prefix}wo": self.wo, f"{prefix}head_weights": self.head_weights}
        if self.bias_table is not None:
            out[f"{prefix}bias_table"] = self.bias_table
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, heads: int, prefix: str = "") -> "AttentionParams":
        return cls(heads, tensors[f"{prefix}wq"], tensors[f"{prefix}wk"], tensors[f"{prefix}wv"],
                   tensors[f"{prefix}wo"], bias_table=tensors.get(f"{prefix}bias_table"),
                   head_weights=tensors.get(f"{prefix}head_weights"))


@dataclass
class BlockParams:
    """LayerNorm pairs and the C -> 4C -> C MLP of one transformer block."""

    ln1_scale: np.ndarray
    ln1_offset: np.ndarray
    ln2_scale: np.ndarray
    ln2_offset: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        c = np.shape(self.ln1_scale)[0]
        expected = {"ln1_scale": (c,), "ln1_offset": (c,), "ln2_scale": (c,), "ln2_offset": (c,),
                    "w1": (c, 4 * c), "b1": (4 * c,), "w2": (4 * c, c), "b2": (c,)}
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    @property
    def channels(self) -> int:
        return self.ln1_scale.shape[0]

    @classmethod
    def init(cls, channels: int, seed: int = 0, std: float = 0.02) -> "BlockParams":
        rng = np.random.default_rng(seed)
        c = channels
        return cls(np.ones(c), np.zeros(c), np.ones(c), np.zeros(c),
                   rng.normal(0.0, std, (c, 4 * c)), np.zeros(4 * c),
                   rng.normal(0.0, std, (4 * c, c)), np.zeros(c))

    def to_tensors(self, prefix: str = "") -> dict:
        return {f"{prefix}{k}": getattr(self, k) for k in
                ("ln1_scale", "ln1_offset", "ln2_scale", "ln2_offset", "w1", "b1", "w2", "b2")}

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str = "") -> "BlockParams":
        return cls(*(tensors[f"{prefix}{k}"] for k in
                     ("ln1_scale", "ln1_offset", "ln2_scale", "ln2_offset", "w1", "b1", "w2", "b2")))


def save_swin_pair(attn: Sequence[AttentionParams], blocks: Sequence[BlockParams]) -> bytes:
    tensors = {}
    for i, (a, b) in enumerate(zip(attn, blocks)):
        tensors.update(a.to_tensors(f"block{i}.attn."))
        tensors.update(b.to_tensors(f"block{i}.mlp."))
    return dump_tensors(tensors)


def load_swin_pair(data: bytes, heads: int) -> tuple:
    tensors = load_tensors(data)
    attn = tuple(AttentionParams.from_tensors(tensors, heads, f"block{i}.attn.") for i in range(2))
    blocks = tuple(BlockParams.from_tensors(tensors, f"block{i}.mlp.") for i in range(2))
    return attn, blocks


def layer_norm(x: np.ndarray, scale=None, offset=None, eps: float = LN_EPS) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mean) / np.sqrt(var + eps)
    if scale is not None:
        y = y * scale
    if offset is not None:
        y = y + offset
    return y


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def mlp(x: np.ndarray, p: BlockParams) -> np.ndarray:
    return gelu(x @ p.w1 + p.b1) @ p.w2 + p.b2


def relative_position_index(window_size: int) -> np.ndarray:
    """(M^2, M^2) indices into a ((2M-1)^2,) bias table."""
    m = window_size
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    return rel[0] * (2 * m - 1) + rel[1]


def relative_position_bias(table: np.ndarray, window_size: int) -> np.ndarray:
    """Gather the bias table into (heads, M^2, M^2)."""
    idx = relative_position_index(window_size)
    return np.transpose(table[idx], (2, 0, 1))


def window_partition(x: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """(H, W, C) -> (num_windows, M*M, C), after rolling by -shift."""
    h, w, c = x.shape
    spec.check(h, w)
    m = spec.window_size
    if spec.shift:
        x = np.roll(x, (-spec.shift, -spec.shift), axis=(0, 1))
    x = x.reshape(h // m, m, w // m, m, c).transpose(0, 2, 1, 3, 4)
    return x.reshape(-1, m * m, c)


def window_reverse(windows: np.ndarray, spec: WindowSpec, dims: tuple) -> np.ndarray:
    h, w = dims
    spec.check(h, w)
    m = spec.window_size
    c = windows.shape[-1]
    x = windows.reshape(h // m, w // m, m, m, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
    if spec.shift:
        x = np.roll(x, (spec.shift, spec.shift), axis=(0, 1))
    return x


def split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    """(..., N, C) -> (..., heads, N, C // heads)."""
    *lead, n, c = x.shape
    return np.moveaxis(x.reshape(*lead, n, heads, c // heads), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    """(..., heads, N, d) -> (..., N, heads * d)."""
    x = np.moveaxis(x, -3, -2)
    return x.reshape(*x.shape[:-2], -1)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(q: np.ndarray, k: np.ndarray, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Row-softmax of q k^T / sqrt(d) + bias; q, k are (..., heads, N, d)."""
    d = q.shape[-1]
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)
    if bias is not None:
        logits = logits + bias
    return softmax(logits, axis=-1)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, bias: Optional[np.ndarray] = None,
              head_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Multi-head attention for per-head q, k, v of shape (..., heads, N, d).

    Each head's output is scaled by its weight and the heads are laid side by
    side, giving (..., N, heads * d).
    """
    heads = q.shape[-3]
    out = attention_weights(q, k, bias) @ v
    if head_weights is not None:
        out = out * np.asarray(head_weights, dtype=np.float64).reshape(heads, 1, 1)
    return merge_heads(out)


def msa(tokens: np.ndarray, params: AttentionParams, bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Self-attention over (..., N, C) token groups followed by the output projection."""
    h = params.heads
    q = split_heads(tokens @ params.wq, h)
    k = split_heads(tokens @ params.wk, h)
    v = split_heads(tokens @ params.wv, h)
    return attention(q, k, v, bias, params.head_weights) @ params.wo


def window_msa(x: np.ndarray, params: AttentionParams, spec: WindowSpec) -> np.ndarray:
    """(S)W-MSA over an (H, W, C) map; shape is preserved."""
    h, w, _ = x.shape
    windows = window_partition(x, spec)
    bias = None
    if params.bias_table is not None:
        if params.window_size != spec.window_size:
            raise ValueError(f"bias table is for window {params.window_size}, spec uses {spec.window_size}")
        bias = relative_position_bias(params.bias_table, spec.window_size)
    return window_reverse(msa(windows, params, bias), spec, (h, w))


def swin_block(x: np.ndarray, attn: AttentionParams, block: BlockParams, spec: WindowSpec) -> np.ndarray:
    _check_channels(x, attn, block)
    z_hat = window_msa(layer_norm(x, block.ln1_scale, block.ln1_offset), attn, spec) + x
    return mlp(layer_norm(z_hat, block.ln2_scale, block.ln2_offset), block) + z_hat


def swin_block_pair(x: np.ndarray, attn: Sequence[AttentionParams], blocks: Sequence[BlockParams],
                    window_size: int) -> np.ndarray:
    """Regular-window block followed by a shifted-window block."""
    if len(attn) != 2 or len(blocks) != 2:
        raise ValueError("a block pair needs two attention and two block parameter sets")
    z = swin_block(x, attn[0], blocks[0], WindowSpec(window_size, 0))
    return swin_block(z, attn[1], blocks[1], WindowSpec.shifted(window_size))


def _check_channels(x, attn, block):
    if x.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got shape {x.shape}")
    c = x.shape[-1]
    if attn.channels != c or block.channels != c:
        raise ValueError(f"channel mismatch: map {c}, attention {attn.channels}, block {block.channels}")


def patch_merge(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Concatenate each 2x2 neighbourhood (4C) and project to 2C.

    Concatenation order is (0,0), (1,0), (0,1), (1,1) in (row, col) offsets.
    """
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"patch merging needs even dims, got {h}x{w}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (4 * c, 2 * c):
        raise ValueError(f"merge weights must be {(4 * c, 2 * c)}, got {weights.shape}")
    merged = np.concatenate([x[0::2, 0::2], x[1::2, 0::2], x[0::2, 1::2], x[1::2, 1::2]], axis=-1)
    return merged @ weights


def cross_attention(queries: np.ndarray, memory: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Learnable queries (K, C) attend over encoder memory ((H, W, C) or (N, C))."""
    mem = memory.reshape(-1, memory.shape[-1])
    if queries.shape[-1] != params.channels or mem.shape[-1] != params.channels:
        raise ValueError("query, memory and parameter channels must agree")
    h = params.heads
    q = split_heads(queries @ params.wq, h)
    k = split_heads(mem @ params.wk, h)
    v = split_heads(mem @ params.wv, h)
    return attention(q, k, v, None, params.head_weights) @ params.wo

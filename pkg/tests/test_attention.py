import math
import struct

import numpy as np
import pytest

from advscene import attention as at
from advscene.tensorfile import TensorFileError, dump_tensors, load_tensors


def loop_attention(tokens, params, positions=None, window=None):
    """Reference self-attention by explicit loops over heads and token pairs."""
    n, c = tokens.shape
    h = params.heads
    d = c // h
    q, k, v = tokens @ params.wq, tokens @ params.wk, tokens @ params.wv
    out = np.zeros((n, c))
    for head in range(h):
        sl = slice(head * d, (head + 1) * d)
        for i in range(n):
            logits = np.empty(n)
            for j in range(n):
                logits[j] = sum(q[i, sl][t] * k[j, sl][t] for t in range(d)) / math.sqrt(d)
                if positions is not None and params.bias_table is not None:
                    dr = positions[i][0] - positions[j][0] + window - 1
                    dc = positions[i][1] - positions[j][1] + window - 1
                    logits[j] += params.bias_table[dr * (2 * window - 1) + dc, head]
            w = np.exp(logits - logits.max())
            w /= w.sum()
            out[i, sl] = params.head_weights[head] * (w @ v[:, sl])
    return out @ params.wo


def random_params(rng, c, heads, window=None, scale=1.0):
    ws = [rng.normal(0, scale, (c, c)) for _ in range(4)]
    table = None if window is None else rng.normal(0, 1.0, ((2 * window - 1) ** 2, heads))
    return at.AttentionParams(heads, *ws, bias_table=table, head_weights=rng.uniform(0.5, 1.5, heads))


def test_window_partition_shapes():
    x = np.arange(8 * 8 * 2, dtype=float).reshape(8, 8, 2)
    spec = at.WindowSpec(4, 0)
    win = at.window_partition(x, spec)
    assert win.shape == (4, 16, 2)
    np.testing.assert_array_equal(win[1, 0], x[0, 4])
    assert np.array_equal(at.window_reverse(win, spec, (8, 8)), x)
    shifted = at.WindowSpec(4, 2)
    assert np.array_equal(at.window_reverse(at.window_partition(x, shifted), shifted, (8, 8)), x)
    np.testing.assert_array_equal(at.window_partition(x, shifted)[0, 0], x[2, 2])


def test_window_roundtrip_random(rng):
    for _ in range(50):
        m = int(rng.integers(1, 6))
        h, w = m * int(rng.integers(1, 4)), m * int(rng.integers(1, 4))
        spec = at.WindowSpec(m, int(rng.integers(0, m)))
        x = rng.normal(size=(h, w, int(rng.integers(1, 4))))
        assert np.array_equal(at.window_reverse(at.window_partition(x, spec), spec, (h, w)), x)


def test_window_errors():
    with pytest.raises(ValueError, match="divide"):
        at.window_partition(np.zeros((6, 8, 1)), at.WindowSpec(4))
    with pytest.raises(ValueError):
        at.WindowSpec(4, 4)


def test_uniform_weights_for_equal_keys():
    q = np.random.default_rng(0).normal(size=(2, 5, 3))
    k = np.ones((2, 5, 3))
    np.testing.assert_allclose(at.attention_weights(q, k), 0.2, atol=1e-15)


def test_softmax_rows(rng):
    w = at.attention_weights(rng.normal(size=(4, 3, 9, 5)) * 10, rng.normal(size=(4, 3, 9, 5)),
                             rng.normal(size=(3, 9, 9)))
    assert np.max(np.abs(w.sum(-1) - 1.0)) < 1e-12
    assert np.all(w >= 0)


def test_three_token_oracle(rng):
    # N = 3 tokens, d = 2, a single head
    tokens = rng.normal(size=(3, 2))
    params = random_params(rng, 2, 1)
    got = at.msa(tokens, params)
    assert np.max(np.abs(got - loop_attention(tokens, params))) < 1e-10


def test_multi_head_oracle(rng):
    tokens = rng.normal(size=(7, 12))
    params = random_params(rng, 12, 3)
    assert np.max(np.abs(at.msa(tokens, params) - loop_attention(tokens, params))) < 1e-10


def map_oracle(x, params, window, shift):
    # full-map window: roll, dense attention with relative-position bias, roll back
    h, w, c = x.shape
    rolled = np.roll(x, (-shift, -shift), axis=(0, 1))
    positions = [(r, col) for r in range(h) for col in range(w)]
    out = loop_attention(rolled.reshape(-1, c), params, positions, window).reshape(h, w, c)
    return np.roll(out, (shift, shift), axis=(0, 1))


@pytest.mark.parametrize("shift", [0, 1, 2])
def test_full_map_window_equals_dense(rng, shift):
    m, c = 4, 6
    x = rng.normal(size=(m, m, c))
    params = random_params(rng, c, 2, window=m, scale=0.5)
    got = at.window_msa(x, params, at.WindowSpec(m, shift))
    assert np.max(np.abs(got - map_oracle(x, params, m, shift))) < 1e-6


def test_windowed_equals_per_window_dense(rng):
    m, c = 2, 4
    x = rng.normal(size=(4, 6, c))
    params = random_params(rng, c, 2, window=m)
    got = at.window_msa(x, params, at.WindowSpec(m, 0))
    for r in range(0, 4, m):
        for col in range(0, 6, m):
            ref = map_oracle(x[r:r + m, col:col + m], params, m, 0)
            assert np.max(np.abs(got[r:r + m, col:col + m] - ref)) < 1e-10


def test_bias_table_window_mismatch(rng):
    params = random_params(rng, 4, 2, window=3)
    with pytest.raises(ValueError, match="bias table"):
        at.window_msa(np.zeros((4, 4, 4)), params, at.WindowSpec(4))


def test_permutation_equivariance(rng):
    tokens = rng.normal(size=(10, 8))
    params = random_params(rng, 8, 2)
    perm = rng.permutation(10)
    np.testing.assert_allclose(at.msa(tokens[perm], params), at.msa(tokens, params)[perm], atol=1e-12)


def test_convex_combination(rng):
    tokens = rng.normal(size=(12, 6))
    params = random_params(rng, 6, 3)
    params.wo = np.eye(6)
    params.head_weights = np.ones(3)
    out = at.msa(tokens, params)
    v = tokens @ params.wv
    assert np.all(out >= v.min(0) - 1e-12) and np.all(out <= v.max(0) + 1e-12)


def test_relative_position_index():
    idx = at.relative_position_index(2)
    # tokens (0,0),(0,1),(1,0),(1,1); offset (0,0) maps to the table centre 4
    assert np.all(np.diag(idx) == 4)
    assert idx[0, 3] == 0 and idx[3, 0] == 8
    assert at.relative_position_index(7).max() == 13 * 13 - 1


def test_layer_norm_moments(rng):
    y = at.layer_norm(rng.normal(5.0, 3.0, size=(100, 16)))
    assert np.max(np.abs(y.mean(-1))) < 1e-6
    assert np.max(np.abs(y.var(-1) - 1.0)) < 1e-6


def test_gelu_values():
    np.testing.assert_allclose(at.gelu(np.array([0.0, 1.0, -1.0])),
                               [0.0, 0.8413447460685429, -0.15865525393145707], atol=1e-15)


def test_zero_block_pair_identity(rng):
    c, m = 8, 4
    x = rng.normal(size=(8, 8, c))
    z = np.zeros((c, c))
    attn = at.AttentionParams(2, z, z, z, z, bias_table=np.zeros(((2 * m - 1) ** 2, 2)))
    blk = at.BlockParams(np.ones(c), np.zeros(c), np.ones(c), np.zeros(c),
                         np.zeros((c, 4 * c)), np.zeros(4 * c), np.zeros((4 * c, c)), np.zeros(c))
    assert np.array_equal(at.swin_block_pair(x, (attn, attn), (blk, blk), m), x)


def test_block_pair_oracle(rng):
    c, m = 4, 2
    x = rng.normal(size=(4, 4, c))
    attn = [random_params(rng, c, 2, window=m, scale=0.3) for _ in range(2)]
    blocks = [at.BlockParams.init(c, seed=s, std=0.3) for s in range(2)]
    got = at.swin_block_pair(x, attn, blocks, m)

    def oracle_block(z, a, b, shift):
        def ln(t, s, o):
            mu = t.mean(-1, keepdims=True)
            return (t - mu) / np.sqrt(((t - mu) ** 2).mean(-1, keepdims=True) + 1e-12) * s + o
        normed = ln(z, b.ln1_scale, b.ln1_offset)
        rolled = np.roll(normed, (-shift, -shift), axis=(0, 1))
        att = np.zeros_like(z)
        for r in range(0, 4, m):
            for col in range(0, 4, m):
                att[r:r + m, col:col + m] = map_oracle(rolled[r:r + m, col:col + m], a, m, 0)
        z_hat = np.roll(att, (shift, shift), axis=(0, 1)) + z
        hidden = ln(z_hat, b.ln2_scale, b.ln2_offset) @ b.w1 + b.b1
        gelu = np.vectorize(lambda t: 0.5 * t * (1 + math.erf(t / math.sqrt(2))))(hidden)
        return gelu @ b.w2 + b.b2 + z_hat

    ref = oracle_block(oracle_block(x, attn[0], blocks[0], 0), attn[1], blocks[1], 1)
    assert np.max(np.abs(got - ref)) < 1e-10


def test_patch_merge(rng):
    c = 3
    x = rng.normal(size=(4, 4, c))
    w = rng.normal(size=(4 * c, 2 * c))
    out = at.patch_merge(x, w)
    assert out.shape == (2, 2, 2 * c)
    for i in range(2):
        for j in range(2):
            cat = np.concatenate([x[2 * i, 2 * j], x[2 * i + 1, 2 * j], x[2 * i, 2 * j + 1],
                                  x[2 * i + 1, 2 * j + 1]])
            assert np.max(np.abs(out[i, j] - cat @ w)) < 1e-10
    with pytest.raises(ValueError, match="even"):
        at.patch_merge(np.zeros((3, 4, c)), w)


def test_patch_merge_constant():
    c = 2
    w = np.vstack([np.eye(c, 2 * c)] * 4) / 4.0  # averages the four neighbours
    out = at.patch_merge(np.full((4, 6, c), 0.7), w)
    np.testing.assert_allclose(out[..., :c], 0.7, atol=1e-15)


def test_cross_attention_oracle(rng):
    c, heads = 6, 2
    queries = rng.normal(size=(2, c))
    memory = rng.normal(size=(2, 2, c))  # N = 4 tokens
    params = random_params(rng, c, heads)
    got = at.cross_attention(queries, memory, params)
    mem = memory.reshape(-1, c)
    q, k, v = queries @ params.wq, mem @ params.wk, mem @ params.wv
    d = c // heads
    ref = np.zeros((2, c))
    for head in range(heads):
        sl = slice(head * d, (head + 1) * d)
        for i in range(2):
            logits = np.array([q[i, sl] @ k[j, sl] / math.sqrt(d) for j in range(4)])
            w = np.exp(logits) / np.exp(logits).sum()
            ref[i, sl] = params.head_weights[head] * (w @ v[:, sl])
    assert np.max(np.abs(got - ref @ params.wo)) < 1e-10


def test_cross_attention_identical_memory(rng):
    c = 4
    token = rng.normal(size=c)
    params = random_params(rng, c, 2)
    params.head_weights = np.ones(2)
    out = at.cross_attention(rng.normal(size=(3, c)), np.tile(token, (5, 1)), params)
    np.testing.assert_allclose(out, np.tile(token @ params.wv @ params.wo, (3, 1)), atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        at.AttentionParams(3, *[np.zeros((4, 4))] * 4)
    with pytest.raises(ValueError):
        at.AttentionParams(2, *[np.zeros((4, 4))] * 4, bias_table=np.zeros((16, 2)))


def test_tensor_container_roundtrip(rng):
    tensors = {"a": rng.normal(size=(2, 3)), "scalar": np.array(1.5), "empty": np.zeros((0, 4)),
               "ünï": rng.normal(size=5)}
    back = load_tensors(dump_tensors(tensors))
    assert list(back) == list(tensors)
    for name in tensors:
        assert back[name].shape == tensors[name].shape
        assert np.array_equal(back[name], tensors[name])


def test_tensor_container_layout():
    # name length (u32), name, rank (u32), dims (u64 each), float64 data, all little-endian
    raw = struct.pack("<I", 1) + b"w" + struct.pack("<I", 2) + struct.pack("<2Q", 1, 2) + struct.pack("<2d", 1.0, -2.0)
    out = load_tensors(raw)
    np.testing.assert_array_equal(out["w"], [[1.0, -2.0]])
    assert dump_tensors(out) == raw
    with pytest.raises(TensorFileError):
        load_tensors(raw[:-1])
    with pytest.raises(TensorFileError):
        load_tensors(raw + raw)


def test_swin_pair_serialization(rng):
    attn = tuple(at.AttentionParams.init(8, 2, window_size=2, seed=s) for s in range(2))
    blocks = tuple(at.BlockParams.init(8, seed=s) for s in range(2))
    x = rng.normal(size=(4, 4, 8))
    attn2, blocks2 = at.load_swin_pair(at.save_swin_pair(attn, blocks), heads=2)
    assert np.array_equal(at.swin_block_pair(x, attn, blocks, 2), at.swin_block_pair(x, attn2, blocks2, 2))

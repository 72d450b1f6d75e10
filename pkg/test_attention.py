"""Test the attention formulations.

This script tests:
1. Attention kinds, labels and coefficient-count resolution
2. Vanilla attention examples and row-stochastic weights
3. Efficient DCT attention against the naive formulation
4. The ideal path: exact at full rank, lossy below it
5. Multi-head composition and head permutation
6. Gradients of vanilla and efficient attention against finite differences
7. Peak and largest live matrices of vanilla and efficient heads
"""
import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.attention import (AttentionKind, AttentionParams, AttentionTag, MultiHeadParams,
                           attention_weights, efficient_dct_attention,
                           efficient_dct_attention_vjp, energy_reconstruction, head_attention,
                           ideal_dct_attention, init_attention_params, init_multi_head_params,
                           multi_head, naive_dct_attention, permute_heads, project_qkv,
                           vanilla_attention, vanilla_attention_vjp)
from src.bench import memory_model
from src.dct import build_plan
from src.numerics import (ALLOCATIONS, Matrix, Rng, ShapeError, central_difference,
                          frobenius_distance, glorot_uniform, hstack, matmul, max_abs_diff,
                          rand_uniform, relative_error)


def _instance(seed: int, n: int, d: int = 8, d_head: int = 4):
    rng = Rng(seed)
    return rand_uniform(rng, n, d, -1.0, 1.0), init_attention_params(rng, d, d_head)


def test_kind_labels():
    assert AttentionKind.vanilla().label == "Vanilla"
    assert AttentionKind.of("dct", scale=0.25).label == "DCT-0.25"
    assert AttentionKind.of("ideal", scale=0.5).label == "IDEAL-0.5"
    assert AttentionKind.of("naive", n_bar=32).label == "NAIVE-n32"
    assert AttentionKind.of("vanilla", scale=0.25) == AttentionKind.vanilla()


def test_kind_validation():
    with pytest.raises(ValueError):
        AttentionKind(AttentionTag.DCT_EFFICIENT)
    with pytest.raises(ValueError):
        AttentionKind(AttentionTag.DCT_EFFICIENT, n_bar=4, scale=0.5)
    with pytest.raises(ValueError):
        AttentionKind(AttentionTag.DCT_EFFICIENT, scale=1.5)
    with pytest.raises(ValueError):
        AttentionKind(AttentionTag.VANILLA, n_bar=4)
    with pytest.raises(ValueError):
        AttentionKind.of("sparse")


def test_kind_resolves_n_bar():
    assert AttentionKind.of("dct", scale=0.25).resolve_n_bar(1024) == 256
    assert AttentionKind.of("dct", n_bar=16).resolve_n_bar(64) == 16
    assert AttentionKind.vanilla().resolve_n_bar(64) is None
    with pytest.raises(ValueError):
        AttentionKind.of("dct", n_bar=65).resolve_n_bar(64)


def test_vanilla_single_token_returns_value():
    q = Matrix([[0.3, -0.2]])
    k = Matrix([[1.0, 2.0]])
    v = Matrix([[5.0, -7.0, 9.0]])
    assert max_abs_diff(vanilla_attention(q, k, v), v) < 1e-15


def test_vanilla_uniform_scores_average_values():
    q = Matrix.zeros(3, 2)
    k = Matrix.ones(3, 2)
    v = Matrix([[1.0], [2.0], [6.0]])
    assert np.allclose(vanilla_attention(q, k, v).data, 3.0, atol=1e-15)


def test_identity_projection_and_zero_input():
    x, _ = _instance(1, 6, d=4)
    eye = Matrix.identity(4)
    q, k, v = project_qkv(x, AttentionParams(eye, eye, eye))
    assert max_abs_diff(q, x) == 0.0 and max_abs_diff(v, x) == 0.0
    _, p = _instance(1, 6, d=4)
    assert max_abs_diff(vanilla_attention(*project_qkv(Matrix.zeros(6, 4), p)), Matrix.zeros(6, 4)) == 0.0


def test_vanilla_matches_numpy_oracle():
    rng = Rng(17)
    q, k, v = (rand_uniform(rng, 4, 3, -1.0, 1.0) for _ in range(3))
    scores = q.data @ k.data.T / math.sqrt(3)
    weights = np.exp(scores - scores.max(axis=1, keepdims=True))
    expected = (weights / weights.sum(axis=1, keepdims=True)) @ v.data
    assert np.max(np.abs(vanilla_attention(q, k, v).data - expected)) < 1e-12


def test_vanilla_rejects_mismatched_shapes():
    with pytest.raises(ShapeError):
        vanilla_attention(Matrix.ones(2, 3), Matrix.ones(2, 4), Matrix.ones(2, 1))
    with pytest.raises(ShapeError):
        vanilla_attention(Matrix.ones(2, 3), Matrix.ones(2, 3), Matrix.ones(3, 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.integers(0, 10_000))
def test_attention_weights_are_row_stochastic(rows, keys, seed):
    rng = Rng(seed)
    weights = attention_weights(rand_uniform(rng, rows, 4, -5.0, 5.0),
                                rand_uniform(rng, keys, 4, -5.0, 5.0)).data
    assert weights.shape == (rows, keys)
    assert np.all(weights >= 0.0)
    assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-12)


def test_vanilla_is_covariant_under_row_permutation():
    x, p = _instance(12, 10, d=6, d_head=3)
    order = np.array([3, 7, 0, 9, 1, 5, 2, 8, 6, 4])
    permuted = Matrix(x.data[order])
    out = vanilla_attention(*project_qkv(x, p)).data
    out_permuted = vanilla_attention(*project_qkv(permuted, p)).data
    assert np.max(np.abs(out_permuted - out[order])) < 1e-12


def test_attention_weights_scale_by_query_width():
    q = Matrix([[1.0, 1.0, 1.0, 1.0]])
    k = Matrix([[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    weights = attention_weights(q, k).data[0]
    expected = math.exp(4.0 / 2.0)
    assert np.allclose(weights, [expected / (expected + 1.0), 1.0 / (expected + 1.0)], atol=1e-15)


@pytest.mark.parametrize("n", [4, 16, 64])
def test_efficient_equals_naive(n):
    for n_bar in sorted({1, n // 4, n // 2, n}):
        for seed in range(8):
            x, p = _instance(seed, n)
            for fast_path in (True, False):
                plan = build_plan(n, n_bar, fast_path)
                gap = max_abs_diff(efficient_dct_attention(x, p, plan), naive_dct_attention(x, p, plan))
                assert gap < 1e-9


def test_naive_with_one_coefficient_on_constant_input():
    x = Matrix.ones(8, 4)
    p = init_attention_params(Rng(9), 4, 2)
    q, k, v = project_qkv(x, p)
    naive = naive_dct_attention(x, p, build_plan(8, 1))
    assert max_abs_diff(naive, vanilla_attention(q, k, v)) < 1e-12
    assert np.allclose(naive.data, naive.data[0], atol=1e-12)


@pytest.mark.parametrize("n", [8, 32])
def test_ideal_exact_at_full_rank(n):
    for seed in range(20):
        x, p = _instance(seed, n)
        q, k, v = project_qkv(x, p)
        assert max_abs_diff(ideal_dct_attention(x, p, build_plan(n, n)), vanilla_attention(q, k, v)) < 1e-9


def test_single_token_efficient_equals_vanilla():
    x, p = _instance(9, 1)
    efficient = efficient_dct_attention(x, p, build_plan(1, 1))
    assert max_abs_diff(efficient, vanilla_attention(*project_qkv(x, p))) < 1e-12


def test_softmax_relaxation_gap_is_positive():
    x, p = _instance(14, 16, d=8, d_head=8)
    plan = build_plan(16, 8)
    gap = frobenius_distance(ideal_dct_attention(x, p, plan), efficient_dct_attention(x, p, plan))
    assert gap > 1e-9


def test_ideal_reconstruction_error_shrinks_with_n_bar():
    x, p = _instance(4, 32)
    q, k, _ = project_qkv(x, p)
    errors = []
    for n_bar in (4, 8, 16, 32):
        energy, reconstructed = energy_reconstruction(q, k, build_plan(32, n_bar))
        errors.append(frobenius_distance(reconstructed, energy))
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-9


def test_head_attention_dispatch():
    x, p = _instance(1, 16)
    plan = build_plan(16, 4)
    assert max_abs_diff(head_attention(x, p, AttentionKind.of("dct", n_bar=4), plan),
                        efficient_dct_attention(x, p, plan)) == 0.0
    assert max_abs_diff(head_attention(x, p, AttentionKind.of("naive", n_bar=4), plan),
                        naive_dct_attention(x, p, plan)) == 0.0
    assert max_abs_diff(head_attention(x, p, AttentionKind.of("ideal", n_bar=4), plan),
                        ideal_dct_attention(x, p, plan)) == 0.0


def test_head_attention_wrong_plan_length():
    x, p = _instance(1, 16)
    with pytest.raises(ShapeError):
        head_attention(x, p, AttentionKind.of("dct", n_bar=4), build_plan(8, 4))


def test_multi_head_single_head_identity_projection():
    x, p = _instance(2, 8, d=4, d_head=4)
    params = MultiHeadParams(heads=(p,), w_o=Matrix.identity(4))
    q, k, v = project_qkv(x, p)
    assert max_abs_diff(multi_head(x, params, AttentionKind.vanilla()), vanilla_attention(q, k, v)) < 1e-15


def test_multi_head_permutation_invariance():
    rng = Rng(21)
    x = rand_uniform(rng, 16, 32, -1.0, 1.0)
    params = init_multi_head_params(rng, 32, 4)
    permuted = permute_heads(params, [2, 0, 3, 1])
    for kind in (AttentionKind.vanilla(), AttentionKind.of("dct", scale=0.25)):
        assert max_abs_diff(multi_head(x, params, kind), multi_head(x, permuted, kind)) < 1e-12


def test_multi_head_matches_per_head_loop():
    rng = Rng(31)
    x = rand_uniform(rng, 32, 64, -1.0, 1.0)
    params = init_multi_head_params(rng, 64, 8)
    columns = []
    for p in params.heads:
        q, k, v = (x.data @ w.data for w in (p.w_q, p.w_k, p.w_v))
        scores = q @ k.T / math.sqrt(p.d_head)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        columns.append((weights / weights.sum(axis=1, keepdims=True)) @ v)
    expected = np.hstack(columns) @ params.w_o.data
    got = multi_head(x, params, AttentionKind.vanilla())
    assert got.shape == (32, 64)
    assert np.max(np.abs(got.data - expected)) < 1e-10


def test_efficient_multi_head_shares_one_compression():
    rng = Rng(23)
    x = rand_uniform(rng, 64, 32, -1.0, 1.0)
    params = init_multi_head_params(rng, 32, 4)
    kind = AttentionKind.of("dct", n_bar=16)
    for fast_path in (True, False):
        plan = build_plan(64, 16, fast_path)
        per_head = hstack([head_attention(x, p, kind, plan) for p in params.heads])
        expected = matmul(per_head, params.w_o)
        assert max_abs_diff(multi_head(x, params, kind, plan), expected) < 1e-10


def test_multi_head_rejects_inconsistent_params():
    rng = Rng(3)
    params = init_multi_head_params(rng, 16, 2)
    with pytest.raises(ShapeError):
        multi_head(rand_uniform(rng, 8, 12, -1.0, 1.0), params, AttentionKind.vanilla())
    bad = MultiHeadParams(heads=params.heads, w_o=glorot_uniform(rng, 6, 16))
    with pytest.raises(ShapeError):
        multi_head(rand_uniform(rng, 8, 16, -1.0, 1.0), bad, AttentionKind.vanilla())
    with pytest.raises(ValueError):
        init_multi_head_params(rng, 16, 3)


def test_params_reject_disagreeing_projections():
    rng = Rng(4)
    with pytest.raises(ShapeError):
        AttentionParams(glorot_uniform(rng, 8, 4), glorot_uniform(rng, 8, 4), glorot_uniform(rng, 8, 2))


@pytest.mark.parametrize("seed", range(10))
def test_vanilla_vjp_matches_finite_differences(seed):
    rng = Rng(seed)
    q, k, v, upstream = (rand_uniform(rng, 8, 4, -1.0, 1.0) for _ in range(4))
    d_q, d_k, d_v = vanilla_attention_vjp(q, k, v, upstream)
    assert relative_error(d_q, central_difference(lambda m: vanilla_attention(m, k, v), q, upstream)) < 1e-5
    assert relative_error(d_k, central_difference(lambda m: vanilla_attention(q, m, v), k, upstream)) < 1e-5
    assert relative_error(d_v, central_difference(lambda m: vanilla_attention(q, k, m), v, upstream)) < 1e-5


def test_vanilla_vjp_degenerate_cases():
    rng = Rng(40)
    q, k, v = (rand_uniform(rng, 5, 3, -1.0, 1.0) for _ in range(3))
    for grad in vanilla_attention_vjp(q, k, v, Matrix.zeros(5, 3)):
        assert max_abs_diff(grad, Matrix.zeros(*grad.shape)) == 0.0

    q1, k1, v1, up = (rand_uniform(rng, 1, 3, -1.0, 1.0) for _ in range(4))
    d_q, d_k, d_v = vanilla_attention_vjp(q1, k1, v1, up)
    assert max_abs_diff(d_v, up) < 1e-15
    assert np.max(np.abs(d_q.data)) < 1e-15 and np.max(np.abs(d_k.data)) < 1e-15


def test_vanilla_vjp_rejects_bad_upstream():
    q = Matrix.ones(4, 2)
    with pytest.raises(ShapeError):
        vanilla_attention_vjp(q, q, q, Matrix.ones(4, 3))


@pytest.mark.parametrize("seed", range(3))
def test_efficient_vjp_matches_finite_differences(seed):
    x, p = _instance(seed, 8, d=6, d_head=3)
    plan = build_plan(8, 4)
    upstream = rand_uniform(Rng(seed + 100), 8, 3, -1.0, 1.0)
    analytic = efficient_dct_attention_vjp(x, p, plan, upstream)
    numeric = central_difference(lambda m: efficient_dct_attention(m, p, plan), x, upstream)
    assert relative_error(analytic, numeric) < 1e-5


def _head_window(x, p, kind, plan=None):
    with ALLOCATIONS.measure() as window:
        out = head_attention(x, p, kind, plan)
        del out
    return window


def test_vanilla_head_peak_matches_model():
    n, d_head = 128, 16
    x, p = _instance(5, n, d=d_head, d_head=d_head)
    window = _head_window(x, p, AttentionKind.vanilla())
    assert window.peak_floats == memory_model("vanilla", n, None, d_head)
    assert window.largest_floats == n * n


def test_efficient_head_never_builds_n_by_n():
    n, n_bar, d = 256, 64, 32
    x, p = _instance(6, n, d=d, d_head=d)
    for fast_path in (True, False):
        window = _head_window(x, p, AttentionKind.of("dct", n_bar=n_bar), build_plan(n, n_bar, fast_path))
        assert window.largest_floats <= max(n_bar * n, n * d)
        assert window.largest_floats < n * n


def test_efficient_matrix_path_peak_within_model():
    n, n_bar, d_head = 1024, 256, 64
    x, p = _instance(7, n, d=d_head, d_head=d_head)
    window = _head_window(x, p, AttentionKind.of("dct", n_bar=n_bar), build_plan(n, n_bar, fast_path=False))
    model = memory_model("dct", n, n_bar, d_head)
    assert abs(window.peak_floats - model) <= 0.1 * model


def test_efficient_peak_well_below_vanilla():
    n, d_head = 1024, 64
    x, p = _instance(8, n, d=d_head, d_head=d_head)
    vanilla = _head_window(x, p, AttentionKind.vanilla()).peak_floats
    efficient = _head_window(x, p, AttentionKind.of("dct", n_bar=256), build_plan(n, 256)).peak_floats
    assert efficient <= 0.4 * vanilla


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

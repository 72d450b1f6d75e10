"""Test the orthonormal DCT-II and its FFT route.

This script tests:
1. Orthonormality of the transform matrix for small and awkward lengths
2. Agreement with scipy's orthonormal DCT-II
3. Round trips, truncation and constant-signal compaction
4. Makhoul's FFT route against the matrix route
5. Plan caching and the 2-D transform
"""
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.fft import dct as scipy_dct

from src.dct import (FFT_BLOCK_COLS, FFT_WORKSPACE_PER_ENTRY, FastPathError, build_plan,
                     clear_plan_cache, dct2_forward, dct2_inverse, dct_forward, dct_inverse,
                     dct_matrix, get_plan, is_power_of_two, makhoul_dct, makhoul_idct,
                     n_bar_for_scale)
from src.numerics import ALLOCATIONS, Matrix, Rng, max_abs_diff, rand_uniform


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 8, 16, 64, 128, 256, 512])
def test_dct_matrix_is_orthonormal(n):
    d = dct_matrix(n, n).data
    assert np.max(np.abs(d @ d.T - np.eye(n))) < 1e-10


def test_dct_matrix_examples():
    assert dct_matrix(1, 1).to_list() == [[1.0]]
    d2 = dct_matrix(2, 2).data
    h = np.sqrt(0.5)
    assert np.allclose(d2, [[h, h], [h, -h]], atol=1e-15)


def test_dct_matrix_rejects_bad_n_bar():
    with pytest.raises(ValueError):
        dct_matrix(4, 0)
    with pytest.raises(ValueError):
        dct_matrix(4, 5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32))
def test_matches_scipy_oracle(n, seed):
    x = rand_uniform(Rng(seed), n, 3, -1.0, 1.0)
    expected = scipy_dct(x.data, type=2, norm="ortho", axis=0)
    got = dct_forward(build_plan(n, n, fast_path=False), x)
    assert np.allclose(got.data, expected, atol=1e-12)


@pytest.mark.parametrize("n", [1, 5, 16, 100])
def test_full_rank_round_trip(n):
    plan = build_plan(n, n)
    x = rand_uniform(Rng(n), n, 6, -2.0, 2.0)
    assert max_abs_diff(dct_inverse(plan, dct_forward(plan, x)), x) < 1e-9


def test_constant_signal_compacts_into_dc():
    coefficients = dct_forward(build_plan(8, 8, fast_path=False), Matrix.ones(8, 1)).data[:, 0]
    assert abs(coefficients[0] - np.sqrt(8.0)) < 1e-12
    assert np.all(np.abs(coefficients[1:]) < 1e-12)

    reconstructed = dct_inverse(build_plan(8, 1), dct_forward(build_plan(8, 1), Matrix.ones(8, 1)))
    assert np.allclose(reconstructed.data, 1.0, atol=1e-12)


def test_full_rank_preserves_energy():
    x = rand_uniform(Rng(13), 50, 3, -1.0, 1.0)
    coefficients = dct_forward(build_plan(50, 50), x)
    assert abs(np.linalg.norm(coefficients.data) - np.linalg.norm(x.data)) < 1e-9


def test_truncated_reconstruction_has_low_rank():
    plan = build_plan(16, 4, fast_path=False)
    e = rand_uniform(Rng(8), 16, 16, 0.0, 1.0)
    singular = np.linalg.svd(dct2_inverse(plan, dct2_forward(plan, e)).data, compute_uv=False)
    assert np.all(singular[4:] < 1e-9)


def test_reconstruction_error_monotone_in_n_bar():
    n = 16
    x = rand_uniform(Rng(10), n, 2, -1.0, 1.0)
    e = rand_uniform(Rng(12), n, n, 0.0, 1.0)
    errors_1d, errors_2d = [], []
    for n_bar in range(1, n + 1):
        plan = build_plan(n, n_bar, fast_path=False)
        errors_1d.append(np.linalg.norm(dct_inverse(plan, dct_forward(plan, x)).data - x.data))
        errors_2d.append(np.linalg.norm(dct2_inverse(plan, dct2_forward(plan, e)).data - e.data))
    for errors in (errors_1d, errors_2d):
        assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))


def test_truncation_is_projection():
    plan = build_plan(32, 8, fast_path=False)
    x = rand_uniform(Rng(3), 32, 4, -1.0, 1.0)
    once = dct_inverse(plan, dct_forward(plan, x))
    twice = dct_inverse(plan, dct_forward(plan, once))
    assert max_abs_diff(once, twice) < 1e-12
    assert np.linalg.norm(once.data) <= np.linalg.norm(x.data) + 1e-12


@pytest.mark.parametrize("n", [1, 2, 4, 8, 32, 256, 1024])
def test_makhoul_matches_matrix_route(n):
    rng = Rng(n)
    x = rand_uniform(rng, n, 10, -1.0, 1.0)
    d = dct_matrix(n, n).data
    assert np.max(np.abs(makhoul_dct(x.data) - d @ x.data)) < 1e-9
    c = d @ x.data
    assert np.max(np.abs(makhoul_idct(c) - d.T @ c)) < 1e-9


def test_makhoul_one_dimensional_input():
    x = np.arange(8, dtype=float)
    assert np.allclose(makhoul_dct(x), scipy_dct(x, norm="ortho"), atol=1e-12)


def test_makhoul_small_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.max(np.abs(makhoul_dct(x) - dct_matrix(4, 4).data @ x)) < 1e-12
    ones = makhoul_dct(np.ones(8))
    assert abs(ones[0] - np.sqrt(8.0)) < 1e-12
    assert np.all(np.abs(ones[1:]) < 1e-12)
    signal = rand_uniform(Rng(256), 256, 1, -1.0, 1.0).data[:, 0]
    assert np.max(np.abs(makhoul_idct(makhoul_dct(signal)) - signal)) < 1e-9


def test_makhoul_rejects_other_lengths():
    with pytest.raises(FastPathError):
        makhoul_dct(np.ones((6, 2)))
    with pytest.raises(FastPathError):
        makhoul_idct(np.ones(12))


def test_fast_path_only_for_powers_of_two():
    assert build_plan(64, 16, fast_path=True).fast_path
    assert not build_plan(48, 16, fast_path=True).fast_path
    assert not build_plan(64, 16, fast_path=False).fast_path
    assert is_power_of_two(1) and is_power_of_two(1024)
    assert not is_power_of_two(0) and not is_power_of_two(96)


def test_fast_and_matrix_plans_agree_when_truncated():
    x = rand_uniform(Rng(11), 128, 5, -1.0, 1.0)
    fast = build_plan(128, 32, fast_path=True)
    slow = build_plan(128, 32, fast_path=False)
    assert max_abs_diff(dct_forward(fast, x), dct_forward(slow, x)) < 1e-9
    c = dct_forward(slow, x)
    assert max_abs_diff(dct_inverse(fast, c), dct_inverse(slow, c)) < 1e-9


def test_fast_path_reserves_workspace():
    plan = build_plan(64, 16, fast_path=True)
    x = rand_uniform(Rng(2), 64, 4, -1.0, 1.0)
    with ALLOCATIONS.measure() as window:
        dct_forward(plan, x)
    assert window.peak_floats >= 3 * 64 * 4
    assert window.largest_floats == 16 * 4


def test_fast_path_transforms_wide_inputs_in_column_blocks():
    n, n_bar, cols = 64, 16, 200
    x = rand_uniform(Rng(4), n, cols, -1.0, 1.0)
    fast = build_plan(n, n_bar, fast_path=True)
    slow = build_plan(n, n_bar, fast_path=False)
    with ALLOCATIONS.measure() as window:
        coefficients = dct_forward(fast, x)
    assert window.peak_floats == n_bar * cols + FFT_WORKSPACE_PER_ENTRY * n * FFT_BLOCK_COLS
    assert max_abs_diff(coefficients, dct_forward(slow, x)) < 1e-9
    assert max_abs_diff(dct_inverse(fast, coefficients), dct_inverse(slow, coefficients)) < 1e-9


def test_shape_mismatch_raises():
    plan = build_plan(8, 4)
    with pytest.raises(ValueError):
        dct_forward(plan, Matrix.ones(7, 2))
    with pytest.raises(ValueError):
        dct_inverse(plan, Matrix.ones(8, 2))


def test_plan_cache_reuses_plans():
    clear_plan_cache()
    assert get_plan(64, 16, True) is get_plan(64, 16, True)
    assert get_plan(64, 16, True) is not get_plan(64, 16, False)
    clear_plan_cache()


def test_n_bar_for_scale():
    assert n_bar_for_scale(1024, 0.25) == 256
    assert n_bar_for_scale(3, 0.25) == 1
    assert n_bar_for_scale(10, 0.25) == 3
    assert n_bar_for_scale(7, 1.0) == 7
    with pytest.raises(ValueError):
        n_bar_for_scale(8, 0.0)


def test_dct2_full_rank_round_trip():
    plan = build_plan(16, 16)
    e = rand_uniform(Rng(5), 16, 16, 0.0, 1.0)
    assert max_abs_diff(dct2_inverse(plan, dct2_forward(plan, e)), e) < 1e-9


def test_dct2_matches_matrix_form():
    plan = build_plan(16, 4, fast_path=False)
    e = rand_uniform(Rng(6), 16, 16, 0.0, 1.0)
    d = plan.d_bar.data
    assert np.allclose(dct2_forward(plan, e).data, d @ e.data @ d.T, atol=1e-12)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

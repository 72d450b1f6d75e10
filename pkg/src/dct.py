"""Orthonormal DCT-II: matrix form, truncation, 2-D variant and Makhoul's FFT route.

Row index of the transform matrix is the frequency k, column index is the
sample position m:

    D[k][m] = alpha_k * cos(pi * (2m + 1) * k / (2n))
    alpha_0 = sqrt(1/n), alpha_k = sqrt(2/n) for k > 0

Keeping the first n_bar rows gives the truncated transform D_bar.
"""
import logging
import math
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import config
from .numerics import ALLOCATIONS, Matrix, ShapeError, matmul, transpose

logger = logging.getLogger(__name__)

# Floats of FFT workspace per signal entry: complex spectrum plus one real buffer
FFT_WORKSPACE_PER_ENTRY = 3

# Columns per FFT call; caps the workspace of wide inputs
FFT_BLOCK_COLS = 64


class FastPathError(ValueError):
    """Raised when the FFT route is forced on a length it does not support."""


def is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def n_bar_for_scale(n: int, scale: float) -> int:
    """Coefficient count for a scale factor: max(1, round(scale·n)), halves rounded up."""
    if not 0 < scale <= 1:
        raise ValueError(f"scale must lie in (0, 1], got {scale}")
    return max(1, int(math.floor(scale * n + 0.5)))


def _alpha(n: int) -> np.ndarray:
    alpha = np.full(n, math.sqrt(2.0 / n))
    alpha[0] = math.sqrt(1.0 / n)
    return alpha


def dct_matrix(n: int, n_bar: int) -> Matrix:
    """
    Truncated orthonormal DCT-II matrix.

    Args:
        n: Signal length
        n_bar: Number of retained low-frequency rows, 1 <= n_bar <= n

    Returns:
        n_bar x n Matrix with orthonormal rows
    """
    if not 1 <= n_bar <= n:
        raise ValueError(f"n_bar must satisfy 1 <= n_bar <= n, got n_bar={n_bar}, n={n}")
    k = np.arange(n_bar)[:, None]
    m = np.arange(n)[None, :]
    d_bar = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * _alpha(n)[:n_bar, None]
    return Matrix._wrap(d_bar)


def _along_rows(vector: np.ndarray, ndim: int) -> np.ndarray:
    return vector.reshape((-1,) + (1,) * (ndim - 1))


def _column_blocks(cols: int):
    for start in range(0, cols, FFT_BLOCK_COLS):
        yield start, min(start + FFT_BLOCK_COLS, cols)


def _require_fast_length(n: int) -> None:
    if not is_power_of_two(n):
        raise FastPathError(
            f"FFT fast path supports power-of-two lengths only, got n={n}; "
            f"use the matrix path (fast_path=False) for this length"
        )


def makhoul_dct(x) -> np.ndarray:
    """
    Orthonormal DCT-II along axis 0 via a single n-point FFT.

    The signal is reordered as evens followed by reversed odds, transformed,
    and rotated by exp(-i·pi·k / 2n).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    _require_fast_length(n)

    reordered = np.concatenate([x[0::2], x[1::2][::-1]], axis=0)
    spectrum = np.fft.fft(reordered, axis=0)
    k = np.arange(n)
    twiddle = np.exp(-1j * np.pi * k / (2 * n)) * _alpha(n)
    return np.real(spectrum * _along_rows(twiddle, x.ndim))


def makhoul_idct(coefficients) -> np.ndarray:
    """Inverse of makhoul_dct along axis 0."""
    c = np.asarray(coefficients, dtype=np.float64)
    n = c.shape[0]
    _require_fast_length(n)

    y = c / _along_rows(_alpha(n), c.ndim)
    # y[n - k] for k = 1..n-1, with y[n] taken as zero
    mirrored = np.concatenate([np.zeros_like(y[:1]), y[:0:-1]], axis=0)
    k = np.arange(n)
    rotation = _along_rows(np.exp(1j * np.pi * k / (2 * n)), c.ndim)
    reordered = np.real(np.fft.ifft(rotation * (y - 1j * mirrored), axis=0))

    x = np.empty_like(reordered)
    half = (n + 1) // 2
    x[0::2] = reordered[:half]
    x[1::2] = reordered[half:][::-1]
    return x


@dataclass(frozen=True)
class DctPlan:
    """Precomputed truncated transform for a fixed (n, n_bar) pair."""
    n: int
    n_bar: int
    d_bar: Matrix
    fast_path: bool


def build_plan(n: int, n_bar: int, fast_path: Optional[bool] = None) -> DctPlan:
    """Build an uncached plan; fast_path defaults to the fft_fast_path setting."""
    enabled = config.FFT_FAST_PATH if fast_path is None else fast_path
    return DctPlan(
        n=n,
        n_bar=n_bar,
        d_bar=dct_matrix(n, n_bar),
        fast_path=bool(enabled) and is_power_of_two(n),
    )


_plan_cache: Dict[Tuple[int, int, bool], DctPlan] = {}
_plan_lock = threading.Lock()


def get_plan(n: int, n_bar: int, fast_path: Optional[bool] = None) -> DctPlan:
    """
    Shared plan for (n, n_bar).

    One plan serves every head and block using the same lengths.
    """
    enabled = bool(config.FFT_FAST_PATH if fast_path is None else fast_path)
    key = (n, n_bar, enabled)
    plan = _plan_cache.get(key)
    if plan is not None:
        return plan
    with _plan_lock:
        plan = _plan_cache.get(key)
        if plan is None:
            plan = build_plan(n, n_bar, enabled)
            _plan_cache[key] = plan
            logger.info(f"Built DCT plan n={n} n_bar={n_bar} fast_path={plan.fast_path}")
    return plan


def clear_plan_cache() -> None:
    with _plan_lock:
        _plan_cache.clear()


def dct_forward(plan: DctPlan, x: Matrix) -> Matrix:
    """Retained DCT coefficients D_bar·x of every column of x (n x d -> n_bar x d)."""
    if x.rows != plan.n:
        raise ShapeError(f"dct_forward expects {plan.n} rows, got matrix of shape {x.shape}")
    if not plan.fast_path:
        return matmul(plan.d_bar, x)

    coefficients = np.empty((plan.n_bar, x.cols))
    with ALLOCATIONS.reserve(coefficients.size):
        for start, stop in _column_blocks(x.cols):
            with ALLOCATIONS.reserve(FFT_WORKSPACE_PER_ENTRY * plan.n * (stop - start)):
                coefficients[:, start:stop] = makhoul_dct(x.data[:, start:stop])[:plan.n_bar]
    return Matrix._wrap(coefficients)


def dct_inverse(plan: DctPlan, x_bar: Matrix) -> Matrix:
    """Reconstruction D_barᵀ·x_bar (n_bar x d -> n x d)."""
    if x_bar.rows != plan.n_bar:
        raise ShapeError(
            f"dct_inverse expects {plan.n_bar} rows, got matrix of shape {x_bar.shape}"
        )
    if not plan.fast_path:
        return matmul(transpose(plan.d_bar), x_bar)

    signal = np.empty((plan.n, x_bar.cols))
    with ALLOCATIONS.reserve(signal.size):
        for start, stop in _column_blocks(x_bar.cols):
            with ALLOCATIONS.reserve(FFT_WORKSPACE_PER_ENTRY * plan.n * (stop - start)):
                padded = np.zeros((plan.n, stop - start))
                padded[:plan.n_bar] = x_bar.data[:, start:stop]
                signal[:, start:stop] = makhoul_idct(padded)
    return Matrix._wrap(signal)


def dct2_forward(plan: DctPlan, e: Matrix) -> Matrix:
    """2-D truncated DCT D_bar·e·D_barᵀ of a square n x n matrix."""
    if e.shape != (plan.n, plan.n):
        raise ShapeError(f"dct2_forward expects a {plan.n}x{plan.n} matrix, got {e.shape}")
    return transpose(dct_forward(plan, transpose(dct_forward(plan, e))))


def dct2_inverse(plan: DctPlan, e_bar: Matrix) -> Matrix:
    """2-D reconstruction D_barᵀ·e_bar·D_bar of a square n_bar x n_bar matrix."""
    if e_bar.shape != (plan.n_bar, plan.n_bar):
        raise ShapeError(
            f"dct2_inverse expects a {plan.n_bar}x{plan.n_bar} matrix, got {e_bar.shape}"
        )
    return transpose(dct_inverse(plan, transpose(dct_inverse(plan, e_bar))))

"""Dense matrix helpers, deterministic randomness and allocation accounting.

Every value flowing through the attention kernels is a Matrix. Constructing a
Matrix registers its element count with the process-wide ALLOCATIONS counter
and releasing the last reference gives it back, so benchmarks can read a
deterministic peak of live floats instead of OS memory statistics.
"""
import logging
import math
import threading
import weakref
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

logger = logging.getLogger(__name__)


class ShapeError(ValueError):
    """Raised when matrix dimensions do not conform."""


class NonFiniteError(ValueError):
    """Raised when an operation requires finite entries."""


@dataclass
class AllocationWindow:
    """Result of one AllocationCounter.measure() block."""
    baseline: int
    peak_floats: int = 0
    largest_floats: int = 0


class AllocationCounter:
    """
    Thread-safe count of float elements alive in tracked matrices.

    Invariant: peak_floats >= live_floats >= 0.
    """

    def __init__(self):
        self.lock = threading.Lock()
        self.live_floats = 0
        self.peak_floats = 0
        self.largest_floats = 0
        self.limit: Optional[int] = None
        self.measuring = False

    def track(self, floats: int, matrix: bool = True) -> None:
        """
        Register floats as live.

        Args:
            floats: Element count
            matrix: False for workspace reservations, which do not count
                    toward largest_floats

        Raises:
            MemoryError: if a float budget is set and would be exceeded
        """
        with self.lock:
            live = self.live_floats + floats
            if self.limit is not None and live > self.limit:
                raise MemoryError(
                    f"Allocation budget of {self.limit} floats exceeded "
                    f"({live} floats would be live)"
                )
            self.live_floats = live
            if live > self.peak_floats:
                self.peak_floats = live
            if matrix and floats > self.largest_floats:
                self.largest_floats = floats

    def release(self, floats: int) -> None:
        """Return floats previously registered with track()."""
        with self.lock:
            self.live_floats -= floats

    def _reset_locked(self) -> None:
        self.peak_floats = self.live_floats
        self.largest_floats = 0

    def reset(self) -> None:
        """Set the peak to the current live count and forget the largest matrix."""
        with self.lock:
            self._reset_locked()

    @contextmanager
    def reserve(self, floats: int) -> Iterator[None]:
        """Count untracked workspace (FFT buffers) for the duration of the block."""
        self.track(floats, matrix=False)
        try:
            yield
        finally:
            self.release(floats)

    @contextmanager
    def budget(self, limit: Optional[int]) -> Iterator[None]:
        """Temporarily cap live floats; None removes the cap."""
        previous = self.limit
        self.limit = limit
        try:
            yield
        finally:
            self.limit = previous

    @contextmanager
    def measure(self) -> Iterator[AllocationWindow]:
        """
        Measure the transient peak of a block.

        The window's peak_floats is the peak minus the live count at entry,
        so inputs and weights built before the block are not counted.
        """
        with self.lock:
            self._reset_locked()
            self.measuring = True
            window = AllocationWindow(baseline=self.live_floats)
        try:
            yield window
        finally:
            with self.lock:
                window.peak_floats = self.peak_floats - window.baseline
                window.largest_floats = self.largest_floats
                self.measuring = False


ALLOCATIONS = AllocationCounter()


class Matrix:
    """Immutable dense row-major matrix of 64-bit floats."""

    __slots__ = ("data", "__weakref__")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"Matrix data must be 2-D, got shape {arr.shape}")
        self._adopt(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Matrix":
        """Adopt a freshly computed array without copying it."""
        m = cls.__new__(cls)
        m._adopt(np.ascontiguousarray(arr, dtype=np.float64))
        return m

    def _adopt(self, arr: np.ndarray) -> None:
        ALLOCATIONS.track(arr.size)
        arr.flags.writeable = False
        self.data = arr
        weakref.finalize(self, ALLOCATIONS.release, arr.size)

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(np.zeros((rows, cols)))

    @classmethod
    def ones(cls, rows: int, cols: int) -> "Matrix":
        return cls._wrap(np.ones((rows, cols)))

    @classmethod
    def identity(cls, n: int) -> "Matrix":
        return cls._wrap(np.eye(n))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __getitem__(self, index) -> float:
        return float(self.data[index])

    def to_list(self) -> List[List[float]]:
        return self.data.tolist()

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols})"


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product a·b."""
    if a.cols != b.rows:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    return Matrix._wrap(a.data @ b.data)


def transpose(a: Matrix) -> Matrix:
    return Matrix._wrap(a.data.T.copy())


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"Cannot add {a.shape} and {b.shape}")
    return Matrix._wrap(a.data + b.data)


def add_bias(a: Matrix, bias: Sequence[float]) -> Matrix:
    """Add a row vector to every row of a."""
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (a.cols,):
        raise ShapeError(f"Bias of shape {bias.shape} does not match {a.shape}")
    return Matrix._wrap(a.data + bias)


def hstack(blocks: Sequence[Matrix]) -> Matrix:
    """Concatenate matrices with equal row counts side by side."""
    if not blocks:
        raise ShapeError("hstack needs at least one block")
    rows = {b.rows for b in blocks}
    if len(rows) != 1:
        raise ShapeError(f"Cannot hstack blocks of shapes {[b.shape for b in blocks]}")
    return Matrix._wrap(np.hstack([b.data for b in blocks]))


def row_block(a: Matrix, start: int, stop: int) -> Matrix:
    """Copy of rows [start, stop)."""
    if not 0 <= start <= stop <= a.rows:
        raise ShapeError(f"Row block [{start}, {stop}) outside {a.shape}")
    return Matrix._wrap(a.data[start:stop].copy())


def softmax_inplace(arr: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a float array, overwriting it."""
    arr -= arr.max(axis=1, keepdims=True)
    np.exp(arr, out=arr)
    arr /= arr.sum(axis=1, keepdims=True)
    return arr


def softmax_rows(a: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction."""
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError(f"softmax_rows received non-finite entries in {a.shape} matrix")
    if a.cols == 0:
        raise ShapeError(f"softmax_rows needs at least one column, got {a.shape}")
    return Matrix._wrap(softmax_inplace(a.data.copy()))


def layer_norm(a: Matrix, gamma: Sequence[float], beta: Sequence[float], eps: float) -> Matrix:
    """
    Normalize each row to zero mean and unit variance, then scale and shift.

    Args:
        a: Input matrix
        gamma: Per-column scale, length a.cols
        beta: Per-column shift, length a.cols
        eps: Variance floor, must be positive

    Returns:
        Normalized matrix of the same shape
    """
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if gamma.shape != (a.cols,) or beta.shape != (a.cols,):
        raise ShapeError(
            f"layer_norm parameters of shapes {gamma.shape}, {beta.shape} "
            f"do not match {a.shape}"
        )
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")

    centered = a.data - a.data.mean(axis=1, keepdims=True)
    variance = np.mean(centered * centered, axis=1, keepdims=True)
    return Matrix._wrap(centered / np.sqrt(variance + eps) * gamma + beta)


def gelu(a: Matrix) -> Matrix:
    """Exact GELU, x·Φ(x) with the erf-based Gaussian CDF."""
    return Matrix._wrap(0.5 * a.data * (1.0 + erf(a.data / math.sqrt(2.0))))


def frobenius_distance(a: Matrix, b: Matrix) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"Cannot compare {a.shape} with {b.shape}")
    return float(np.linalg.norm(a.data - b.data))


def max_abs_diff(a: Matrix, b: Matrix) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"Cannot compare {a.shape} with {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a.data - b.data)))


# SplitMix64 constants
_GAMMA = 0x9E3779B97F4A7C15
_MIX_1 = 0xBF58476D1CE4E5B9
_MIX_2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


class Rng:
    """
    SplitMix64 generator.

    The i-th output only depends on seed + i·gamma, so blocks of draws are
    computed with vectorized uint64 arithmetic (which wraps modulo 2^64).
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def draws(self, count: int) -> np.ndarray:
        """Next count raw 64-bit outputs."""
        z = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(_GAMMA)
        z += np.uint64(self.state)
        self.state = (self.state + count * _GAMMA) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_2)
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self.draws(1)[0])

    def uniform(self, count: int) -> np.ndarray:
        """count floats in [0, 1) with 53 random bits each."""
        return (self.draws(count) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def integers(self, count: int, high: int) -> np.ndarray:
        """count integers in [0, high)."""
        return np.minimum(np.floor(self.uniform(count) * high), high - 1).astype(np.int64)


def rand_uniform(rng: Rng, rows: int, cols: int, lo: float, hi: float) -> Matrix:
    """Matrix of entries drawn from [lo, hi)."""
    if not lo < hi:
        raise ValueError(f"rand_uniform needs lo < hi, got lo={lo}, hi={hi}")
    if rows < 0 or cols < 0:
        raise ShapeError(f"Negative shape ({rows}, {cols})")
    values = lo + (hi - lo) * rng.uniform(rows * cols)
    values = np.minimum(values, np.nextafter(hi, lo))
    return Matrix._wrap(values.reshape(rows, cols))


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int) -> Matrix:
    """Weights uniform in ±sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rand_uniform(rng, fan_in, fan_out, -limit, limit)


def central_difference(fn: Callable[[Matrix], Matrix], x: Matrix, upstream: Matrix,
                       h: float = 1e-5) -> Matrix:
    """
    Gradient of <upstream, fn(x)> with respect to x by central differences.

    Args:
        fn: Function of one matrix
        x: Point of evaluation
        upstream: Weights of the scalarized output, same shape as fn(x)
        h: Step size

    Returns:
        Matrix shaped like x
    """
    grad = np.zeros(x.shape)
    base = x.data.copy()
    for index in np.ndindex(*x.shape):
        original = base[index]
        base[index] = original + h
        plus = float(np.sum(upstream.data * fn(Matrix(base)).data))
        base[index] = original - h
        minus = float(np.sum(upstream.data * fn(Matrix(base)).data))
        base[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return Matrix._wrap(grad)


def relative_error(analytic: Matrix, reference: Matrix) -> float:
    """Norm-wise relative error max|a - r| / max(max|r|, 1e-12)."""
    scale_ = max(float(np.max(np.abs(reference.data))) if reference.size else 0.0, 1e-12)
    return max_abs_diff(analytic, reference) / scale_

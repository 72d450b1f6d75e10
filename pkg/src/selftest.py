"""Named invariant checks behind the `selftest` subcommand.

Each check raises PropertyFailure with a message naming what went wrong;
run_selftest runs them all and logs a ✓ or ✗ line per property.
"""
import logging
from typing import Callable, List, Tuple

import numpy as np

from .attention import (AttentionKind, AttentionTag, attention_weights,
                        efficient_dct_attention, ideal_dct_attention, init_attention_params,
                        naive_dct_attention, project_qkv, vanilla_attention,
                        vanilla_attention_vjp)
from .bench import run_error_profile, run_scaling_bench
from .dct import build_plan, dct_forward, dct_inverse, dct_matrix
from .numerics import (Matrix, Rng, central_difference, matmul, max_abs_diff,
                       rand_uniform, relative_error, transpose)

logger = logging.getLogger(__name__)


class PropertyFailure(AssertionError):
    """Raised by a selftest check whose property does not hold."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise PropertyFailure(message)


def check_dct_orthonormality(seed: int) -> None:
    for n in (1, 2, 3, 4, 7, 8, 16, 64, 128, 256, 512):
        d = dct_matrix(n, n)
        gap = max_abs_diff(matmul(d, transpose(d)), Matrix.identity(n))
        _require(gap < 1e-10, f"|D Dᵀ - I| = {gap:.3g} at n={n}")


def check_dct_round_trip(seed: int) -> None:
    rng = Rng(seed)
    for n in (1, 3, 8, 64, 100):
        plan = build_plan(n, n, fast_path=False)
        x = rand_uniform(rng, n, 4, -1.0, 1.0)
        gap = max_abs_diff(dct_inverse(plan, dct_forward(plan, x)), x)
        _require(gap < 1e-9, f"full-rank round trip error {gap:.3g} at n={n}")

        constant = Matrix(np.full((n, 1), 2.5))
        coefficients = dct_forward(build_plan(n, n, fast_path=False), constant).data[:, 0]
        _require(abs(coefficients[0] - 2.5 * np.sqrt(n)) < 1e-12 * max(1.0, n),
                 f"DC coefficient of a constant signal is wrong at n={n}")
        _require(bool(np.all(np.abs(coefficients[1:]) < 1e-12)),
                 f"constant signal leaks into higher frequencies at n={n}")


def check_makhoul_equivalence(seed: int) -> None:
    rng = Rng(seed)
    n = 1
    while n <= 1024:
        fast = build_plan(n, n, fast_path=True)
        slow = build_plan(n, n, fast_path=False)
        x = rand_uniform(rng, n, 10, -1.0, 1.0)
        gap = max_abs_diff(dct_forward(fast, x), dct_forward(slow, x))
        _require(gap < 1e-9, f"FFT and matrix transforms differ by {gap:.3g} at n={n}")
        c = dct_forward(slow, x)
        gap = max_abs_diff(dct_inverse(fast, c), dct_inverse(slow, c))
        _require(gap < 1e-9, f"FFT and matrix inverses differ by {gap:.3g} at n={n}")
        n *= 2


def check_efficient_matches_naive(seed: int) -> None:
    rng = Rng(seed)
    instances = 0
    while instances < 100:
        for n in (4, 16, 64):
            for n_bar in sorted({1, n // 4, n // 2, n}):
                if instances == 100:
                    break
                x = rand_uniform(rng, n, 8, -1.0, 1.0)
                p = init_attention_params(rng, 8, 4)
                plan = build_plan(n, n_bar)
                gap = max_abs_diff(efficient_dct_attention(x, p, plan), naive_dct_attention(x, p, plan))
                _require(gap < 1e-9, f"efficient and naive differ by {gap:.3g} at n={n}, n_bar={n_bar}")
                instances += 1


def check_ideal_exact_at_full_rank(seed: int) -> None:
    for offset in range(20):
        rng = Rng(seed + offset)
        for n in (8, 32):
            x = rand_uniform(rng, n, 8, -1.0, 1.0)
            p = init_attention_params(rng, 8, 4)
            q, k, v = project_qkv(x, p)
            gap = max_abs_diff(ideal_dct_attention(x, p, build_plan(n, n)), vanilla_attention(q, k, v))
            _require(gap < 1e-9, f"ideal differs from vanilla by {gap:.3g} at n={n}, seed={seed + offset}")


def check_error_separation(seed: int) -> None:
    records = run_error_profile(64, 32, 1, [8, 16, 32, 64], [seed])
    frob = [r.frob_e for r in records]
    _require(all(b <= a + 1e-12 for a, b in zip(frob, frob[1:])),
             f"frob_E increases with n_bar: {frob}")
    _require(records[-1].frob_e < 1e-9, f"frob_E at full rank is {records[-1].frob_e:.3g}")
    for r in records[:-1]:
        _require(r.relax_gap > 1e-6, f"relaxation gap vanished at n_bar={r.n_bar}")


def check_row_stochastic(seed: int) -> None:
    rng = Rng(seed)
    q = rand_uniform(rng, 16, 4, -3.0, 3.0)
    k = rand_uniform(rng, 16, 4, -3.0, 3.0)
    weights = attention_weights(q, k).data
    _require(bool(np.all(weights >= 0)), "attention weights contain negative entries")
    gap = float(np.max(np.abs(weights.sum(axis=1) - 1.0)))
    _require(gap < 1e-12, f"attention weight rows sum to 1 only within {gap:.3g}")


def check_vanilla_gradient(seed: int) -> None:
    for offset in range(10):
        rng = Rng(seed + offset)
        q = rand_uniform(rng, 8, 4, -1.0, 1.0)
        k = rand_uniform(rng, 8, 4, -1.0, 1.0)
        v = rand_uniform(rng, 8, 4, -1.0, 1.0)
        upstream = rand_uniform(rng, 8, 4, -1.0, 1.0)
        d_q, d_k, d_v = vanilla_attention_vjp(q, k, v, upstream)
        checks = (
            ("dQ", d_q, central_difference(lambda m: vanilla_attention(m, k, v), q, upstream)),
            ("dK", d_k, central_difference(lambda m: vanilla_attention(q, m, v), k, upstream)),
            ("dV", d_v, central_difference(lambda m: vanilla_attention(q, k, m), v, upstream)),
        )
        for name, analytic, numeric in checks:
            error = relative_error(analytic, numeric)
            _require(error < 1e-5, f"{name} relative error {error:.3g} at seed={seed + offset}")


def check_memory_ratio(seed: int) -> None:
    records = run_scaling_bench([2048], 0.25, ["vanilla", "dct"], batch=1, reps=3, seed=seed,
                                d=64, heads=1, warmup=0, workload="head", memory_budget=None)
    peaks = {r.kind: r.peak_floats for r in records}
    dct_label = AttentionKind(AttentionTag.DCT_EFFICIENT, scale=0.25).label
    _require(set(peaks) == {"Vanilla", dct_label}, f"missing measurements: {sorted(peaks)}")
    ratio = peaks[dct_label] / peaks["Vanilla"]
    _require(ratio <= 0.4, f"DCT/Vanilla peak ratio at n=2048 is {ratio:.3f}")


CHECKS: List[Tuple[str, Callable[[int], None]]] = [
    ("dct orthonormality", check_dct_orthonormality),
    ("dct round trip and compaction", check_dct_round_trip),
    ("makhoul equals matrix transform", check_makhoul_equivalence),
    ("efficient equals naive", check_efficient_matches_naive),
    ("ideal exact at full rank", check_ideal_exact_at_full_rank),
    ("attention weights row-stochastic", check_row_stochastic),
    ("error profile separation", check_error_separation),
    ("vanilla gradient matches finite differences", check_vanilla_gradient),
    ("memory ratio at n=2048", check_memory_ratio),
]


def run_selftest(seed: int) -> List[str]:
    """
    Run every check.

    Returns:
        Names of the failed properties (empty when all hold)
    """
    failures = []
    for name, check in CHECKS:
        try:
            check(seed)
        except PropertyFailure as e:
            logger.error(f"✗ {name}: {e}")
            failures.append(name)
            continue
        logger.info(f"✓ {name}")
    return failures

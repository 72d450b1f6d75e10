"""Measurement protocols: sequence-length scaling and approximation error profiles.

Memory is the deterministic allocation-counter peak (live float elements
above the baseline of inputs and weights), not OS memory. Timing uses the
monotonic perf_counter, median of the timed repetitions after warm-up.
"""
import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import config
from .attention import (AttentionKind, AttentionTag, efficient_dct_attention,
                        energy_reconstruction, head_attention, init_attention_params,
                        init_multi_head_params, multi_head, project_qkv)
from .dct import get_plan
from .numerics import ALLOCATIONS, Rng, frobenius_distance, matmul, rand_uniform
from .transformer import EncoderConfig, encoder_forward, init_encoder_weights

logger = logging.getLogger(__name__)

WORKLOADS = ("multi-head", "head", "encoder")

# (sequence length, batch size) pairs of the full-model inference table
TABLE_PROTOCOL = ((128, 256), (512, 32), (1024, 16), (4096, 1))

# Peaks are only exact when nothing else allocates concurrently
_measurement_lock = threading.Lock()


def _int_or_none(value) -> Optional[int]:
    return None if pd.isna(value) else int(value)


@dataclass(frozen=True)
class BenchRecord:
    """One scaling measurement, normalized per batch element."""
    kind: str
    n: int
    batch: int
    n_bar: Optional[int]
    reps: int
    time_ms_median: float
    peak_floats: int

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "kind", "n", "batch", "n_bar", "reps", "time_ms_median", "peak_floats",
    )
    CSV_DTYPES: ClassVar[Dict[str, str]] = {
        "kind": "string", "n": "Int64", "batch": "Int64", "n_bar": "Int64", "reps": "Int64",
        "time_ms_median": "float64", "peak_floats": "Int64",
    }

    def csv_row(self) -> list:
        return [self.kind, self.n, self.batch, self.n_bar, self.reps,
                self.time_ms_median, self.peak_floats]

    @classmethod
    def from_csv_row(cls, row: Dict[str, Any]) -> "BenchRecord":
        return cls(
            kind=str(row["kind"]),
            n=int(row["n"]),
            batch=int(row["batch"]),
            n_bar=_int_or_none(row["n_bar"]),
            reps=int(row["reps"]),
            time_ms_median=float(row["time_ms_median"]),
            peak_floats=int(row["peak_floats"]),
        )

    def sort_key(self) -> tuple:
        return (self.kind, self.n, -1 if self.n_bar is None else self.n_bar, self.batch)


@dataclass(frozen=True)
class ErrorRecord:
    """Approximation and relaxation errors of one (n_bar, seed) instance."""
    n: int
    d: int
    n_bar: int
    seed: int
    frob_e: float
    out_err_ideal: float
    out_err_efficient: float
    relax_gap: float

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "n", "d", "n_bar", "seed", "frob_E", "out_err_ideal", "out_err_efficient", "relax_gap",
    )
    CSV_DTYPES: ClassVar[Dict[str, str]] = {
        "n": "Int64", "d": "Int64", "n_bar": "Int64", "seed": "Int64", "frob_E": "float64",
        "out_err_ideal": "float64", "out_err_efficient": "float64", "relax_gap": "float64",
    }

    def csv_row(self) -> list:
        return [self.n, self.d, self.n_bar, self.seed, self.frob_e,
                self.out_err_ideal, self.out_err_efficient, self.relax_gap]

    @classmethod
    def from_csv_row(cls, row: Dict[str, Any]) -> "ErrorRecord":
        return cls(
            n=int(row["n"]),
            d=int(row["d"]),
            n_bar=int(row["n_bar"]),
            seed=int(row["seed"]),
            frob_e=float(row["frob_E"]),
            out_err_ideal=float(row["out_err_ideal"]),
            out_err_efficient=float(row["out_err_efficient"]),
            relax_gap=float(row["relax_gap"]),
        )

    def sort_key(self) -> tuple:
        return (self.n, self.n_bar, self.seed)


def memory_model(tag, n: int, n_bar: Optional[int], d_head: int) -> int:
    """
    Closed-form per-head peak of live floats.

    Vanilla keeps Q, K, V, the n x n weights and the output; the efficient
    path keeps the compressed Q, K, V, the n_bar x n_bar weights, D_barᵀ
    and the output.
    """
    tag = AttentionTag(tag)
    if tag is AttentionTag.VANILLA:
        return n * n + 3 * n * d_head + n * d_head
    if tag is AttentionTag.DCT_EFFICIENT:
        return n_bar * n_bar + n_bar * n + 3 * n_bar * d_head + n * d_head
    raise ValueError(f"No closed-form memory model for {tag.value} attention")


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x)."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("loglog_slope needs at least two paired points")
    slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)
    return float(slope)


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _build_workload(workload: str, kind: AttentionKind, n: int, d: int, heads: int,
                    batch: int, rng: Rng, fast_path: Optional[bool]) -> Tuple[Callable, list]:
    """Weights, plan and batch inputs, all allocated before measurement starts."""
    plan = None
    if kind.compressed:
        plan = get_plan(n, kind.resolve_n_bar(n), fast_path)

    if workload == "encoder":
        cfg = EncoderConfig(d=d, heads=heads, d_ff=4 * d, max_len=n,
                            attention=kind, seed=rng.next_u64(), fast_path=fast_path)
        weights = init_encoder_weights(cfg)
        inputs = [rng.integers(n, cfg.vocab_size) for _ in range(batch)]
        return (lambda ids: encoder_forward(ids, weights, cfg)), inputs

    inputs = [rand_uniform(rng, n, d, -1.0, 1.0) for _ in range(batch)]
    if workload == "head":
        if heads < 1 or d % heads:
            raise ValueError(f"d={d} must be divisible by heads={heads}")
        params = init_attention_params(rng, d, d // heads)
        return (lambda x: head_attention(x, params, kind, plan)), inputs

    params = init_multi_head_params(rng, d, heads)
    return (lambda x: multi_head(x, params, kind, plan)), inputs


def _timed_passes(forward: Callable, inputs: list, reps: int, warmup: int,
                  label: str) -> Tuple[List[float], List[int]]:
    """Whole-batch times (ms) and peaks; outputs stay alive until the batch completes."""
    for _ in range(warmup):
        outputs = [forward(item) for item in inputs]
        del outputs

    times_ms = []
    peaks = []
    for rep in range(reps):
        with ALLOCATIONS.measure() as window:
            start = time.perf_counter()
            outputs = [forward(item) for item in inputs]
            elapsed = time.perf_counter() - start
            del outputs
        times_ms.append(elapsed * 1000.0)
        peaks.append(window.peak_floats)
        logger.debug(f"{label} rep {rep}: {times_ms[-1]:.3f} ms, {peaks[-1]} floats")
    return times_ms, peaks


def _measure_point(kind: AttentionKind, n: int, batch: int, reps: int, warmup: int, seed: int,
                   d: int, heads: int, workload: str, fast_path: Optional[bool],
                   budget: Optional[int]) -> BenchRecord:
    with _measurement_lock:
        forward, inputs = _build_workload(workload, kind, n, d, heads, batch, Rng(seed), fast_path)
        # the budget caps floats allocated on top of inputs and weights
        limit = None if budget is None else ALLOCATIONS.live_floats + budget
        with ALLOCATIONS.budget(limit):
            times_ms, peaks = _timed_passes(forward, inputs, reps, warmup, f"{kind.label} n={n}")

    return BenchRecord(
        kind=kind.label,
        n=n,
        batch=batch,
        n_bar=kind.resolve_n_bar(n),
        reps=reps,
        time_ms_median=float(np.median(times_ms)) / batch,
        peak_floats=_round_half_up(max(peaks) / batch),
    )


def run_scaling_bench(lengths: Sequence[int], scale: float, kinds: Sequence, batch: int,
                      reps: int, seed: int, d: Optional[int] = None, heads: Optional[int] = None,
                      warmup: Optional[int] = None, workload: Optional[str] = None,
                      fast_path: Optional[bool] = None,
                      memory_budget: Optional[int] = None) -> List[BenchRecord]:
    """
    Time and memory of each attention kind across sequence lengths.

    Args:
        lengths: Sequence lengths to measure
        scale: Fraction of n kept as DCT coefficients by compressed kinds
        kinds: Attention tags or CLI names (vanilla, dct, ideal, naive)
        batch: Forward passes per repetition; results are divided by batch
        reps: Timed repetitions, at least 3
        seed: Seed for inputs and weights
        d: Embedding width (config d_model by default)
        heads: Head count (config heads by default)
        warmup: Untimed passes before measuring (config warmup by default)
        workload: "multi-head", "head" or "encoder"
        fast_path: Use the FFT route where possible (config default)
        memory_budget: Optional cap on floats allocated above inputs and weights;
            exceeding it skips the point

    Returns:
        Records sorted by kind, then n; skipped points are logged, not returned
    """
    d = config.D_MODEL if d is None else d
    heads = config.HEADS if heads is None else heads
    warmup = config.WARMUP if warmup is None else warmup
    workload = config.WORKLOAD if workload is None else workload
    memory_budget = config.MEMORY_BUDGET_FLOATS if memory_budget is None else memory_budget

    if reps < 3:
        raise ValueError(f"reps must be at least 3, got {reps}")
    if not lengths or any(n < 1 for n in lengths):
        raise ValueError(f"lengths must be a non-empty list of positive integers, got {list(lengths)}")
    if batch < 1:
        raise ValueError(f"batch must be at least 1, got {batch}")
    if workload not in WORKLOADS:
        raise ValueError(f"Unknown workload '{workload}', expected one of {', '.join(WORKLOADS)}")
    tags = [AttentionTag(k) for k in kinds]

    records = []
    for tag in tags:
        kind = AttentionKind.of(tag, scale=scale)
        for n in lengths:
            logger.info(f"Measuring {kind.label} n={n} batch={batch} ({workload})")
            try:
                record = _measure_point(kind, n, batch, reps, warmup, seed, d, heads,
                                        workload, fast_path, memory_budget)
            except MemoryError as e:
                logger.warning(f"Skipping {kind.label} n={n}: out of memory ({e})")
                continue
            logger.info(
                f"{record.kind} n={n}: {record.time_ms_median:.3f} ms, "
                f"{record.peak_floats} peak floats per element"
            )
            records.append(record)

    return sorted(records, key=lambda r: r.sort_key())


def run_table_bench(kinds: Sequence, scale: float, reps: int, seed: int,
                    protocol: Sequence[Tuple[int, int]] = TABLE_PROTOCOL,
                    **kwargs) -> List[BenchRecord]:
    """Scaling bench over (length, batch) pairs, shrinking the batch as n grows."""
    records = []
    for n, batch in protocol:
        records.extend(run_scaling_bench([n], scale, kinds, batch, reps, seed, **kwargs))
    return sorted(records, key=lambda r: r.sort_key())


def run_error_profile(n: int, d: int, heads: int, n_bar_list: Sequence[int],
                      seeds: Sequence[int], fast_path: Optional[bool] = None) -> List[ErrorRecord]:
    """
    Separate the approximation error from the softmax relaxation error.

    For each seed a random input and head are drawn once; for each n_bar the
    vanilla, efficient and ideal outputs are compared.

    Returns:
        Records sorted by n, n_bar, seed
    """
    for n_bar in n_bar_list:
        if not 1 <= n_bar <= n:
            raise ValueError(f"n_bar={n_bar} must lie in [1, {n}]")
    if heads < 1 or d % heads:
        raise ValueError(f"d={d} must be divisible by heads={heads}")

    records = []
    for seed in seeds:
        rng = Rng(seed)
        x = rand_uniform(rng, n, d, -1.0, 1.0)
        p = init_attention_params(rng, d, d // heads)
        q, k, v = project_qkv(x, p)

        for n_bar in n_bar_list:
            plan = get_plan(n, n_bar, fast_path)
            energy, reconstructed = energy_reconstruction(q, k, plan)
            vanilla = matmul(energy, v)
            ideal = matmul(reconstructed, v)
            efficient = efficient_dct_attention(x, p, plan)
            records.append(ErrorRecord(
                n=n,
                d=d,
                n_bar=n_bar,
                seed=seed,
                frob_e=frobenius_distance(reconstructed, energy),
                out_err_ideal=frobenius_distance(ideal, vanilla),
                out_err_efficient=frobenius_distance(efficient, vanilla),
                relax_gap=frobenius_distance(efficient, ideal),
            ))
        logger.info(f"Error profile seed={seed}: {len(n_bar_list)} coefficient counts")

    return sorted(records, key=lambda r: r.sort_key())

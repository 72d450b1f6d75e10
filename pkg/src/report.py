"""Human-readable summaries of benchmark and error-profile records."""
from typing import Sequence

import numpy as np
import pandas as pd

from .bench import BenchRecord, ErrorRecord
from .storage import format_float, records_to_frame


def _render(frame: pd.DataFrame) -> str:
    return frame.to_string(index=False, na_rep="", float_format=format_float)


def format_bench_table(records: Sequence) -> str:
    """
    Format scaling records for display.

    Returns:
        Aligned table with one line per (kind, n)
    """
    if not records:
        return "No benchmark records"
    frame = records_to_frame(records, BenchRecord)
    return _render(frame.rename(columns={"time_ms_median": "time_ms"}))


def format_error_table(records: Sequence) -> str:
    if not records:
        return "No error-profile records"
    frame = records_to_frame(records, ErrorRecord)
    return _render(frame.rename(columns={"out_err_ideal": "err_ideal",
                                         "out_err_efficient": "err_efficient"}))


def format_ratio_table(records: Sequence) -> str:
    """
    Peak memory and median time of each kind relative to Vanilla at the same n.

    Lengths without a Vanilla measurement (skipped out of memory) are listed
    with empty ratios.
    """
    frame = records_to_frame(records, BenchRecord)
    vanilla = frame[frame["kind"] == "Vanilla"][["n", "batch", "peak_floats", "time_ms_median"]]
    compressed = frame[frame["kind"] != "Vanilla"]
    if compressed.empty:
        return "No compressed kinds to compare against Vanilla"

    merged = compressed.merge(vanilla, on=["n", "batch"], how="left", suffixes=("", "_vanilla"))
    peak_base = merged["peak_floats_vanilla"].astype("float64").replace(0.0, np.nan)
    time_base = merged["time_ms_median_vanilla"].replace(0.0, np.nan)
    merged["peak_vs_vanilla"] = merged["peak_floats"].astype("float64") / peak_base
    merged["time_vs_vanilla"] = merged["time_ms_median"] / time_base
    table = merged.sort_values(["n", "kind"])[["kind", "n", "peak_vs_vanilla", "time_vs_vanilla"]]
    return _render(table)

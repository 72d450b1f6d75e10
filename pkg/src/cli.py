"""Command-line interface: selftest, bench, error and report subcommands.

Exit codes: 0 on success, 1 on a runtime or property failure, 2 on a usage error.
Summary tables go to standard output, logs to standard error.
"""
import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import yaml

from . import config
from .attention import AttentionTag
from .bench import (WORKLOADS, BenchRecord, ErrorRecord, run_error_profile,
                    run_scaling_bench, run_table_bench)
from .report import format_bench_table, format_error_table, format_ratio_table
from .selftest import run_selftest
from .storage import StorageError, detect_record_type, read_csv, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

SUBCOMMANDS = ("selftest", "bench", "error", "report")
PROTOCOLS = ("sweep", "table")


class UsageError(ValueError):
    """Raised for flag values that parse but are not acceptable."""


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _kind_list(text: str) -> List[str]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    valid = [tag.value for tag in AttentionTag]
    for name in names:
        if name not in valid:
            raise argparse.ArgumentTypeError(f"unknown kind '{name}', expected one of {', '.join(valid)}")
    if not names:
        raise argparse.ArgumentTypeError("expected at least one kind")
    return names


@dataclass
class CliConfig:
    """Validated settings of one invocation; unset values come from config.yaml."""
    subcommand: str
    seed: int
    lengths: List[int] = field(default_factory=list)
    scale: float = 0.25
    kinds: List[str] = field(default_factory=list)
    batch: int = 1
    reps: int = 10
    warmup: int = 3
    d: int = 512
    heads: int = 8
    workload: str = "multi-head"
    fast_path: bool = True
    protocol: str = "sweep"
    budget: Optional[int] = None
    n: int = 64
    n_bar_list: List[int] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    out: Optional[Path] = None
    csv: Optional[Path] = None

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise UsageError(f"Unknown subcommand '{self.subcommand}'")
        if not 0 < self.scale <= 1:
            raise UsageError(f"--scale must lie in (0, 1], got {self.scale}")
        if self.subcommand == "bench":
            if not self.lengths or min(self.lengths) < 1:
                raise UsageError(f"--lengths must be positive, got {self.lengths}")
            if self.reps < 3:
                raise UsageError(f"--reps must be at least 3, got {self.reps}")
            if self.batch < 1 or self.warmup < 0:
                raise UsageError(f"--batch must be >= 1 and --warmup >= 0, got {self.batch}, {self.warmup}")
            if self.budget is not None and self.budget < 1:
                raise UsageError(f"--budget must be positive, got {self.budget}")
        if self.subcommand in ("bench", "error"):
            if self.d < 1 or self.heads < 1 or self.d % self.heads:
                raise UsageError(f"--d={self.d} must be a positive multiple of --heads={self.heads}")
        if self.subcommand == "error":
            bad = [b for b in self.n_bar_list if not 1 <= b <= self.n]
            if bad:
                raise UsageError(f"--nbar values {bad} must lie in [1, {self.n}]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dct-attention",
        description="DCT-compressed self-attention: self-tests, scaling benchmarks and error profiles",
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default: LOG_LEVEL or INFO)")
    parser.add_argument("--config", type=Path, default=None, help="Alternative config.yaml")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    selftest = sub.add_parser("selftest", help="Run the invariant suite")
    selftest.add_argument("--seed", type=int, default=None)

    bench = sub.add_parser("bench", help="Measure time and peak floats against sequence length")
    bench.add_argument("--lengths", type=_int_list, default=None)
    bench.add_argument("--scale", type=float, default=None)
    bench.add_argument("--kinds", type=_kind_list, default=None)
    bench.add_argument("--batch", type=int, default=None)
    bench.add_argument("--reps", type=int, default=None)
    bench.add_argument("--warmup", type=int, default=None)
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--d", type=int, default=None)
    bench.add_argument("--heads", type=int, default=None)
    bench.add_argument("--workload", choices=WORKLOADS, default=None)
    bench.add_argument("--no-fft", action="store_true", help="Use the matrix DCT path everywhere")
    bench.add_argument("--protocol", choices=PROTOCOLS, default="sweep",
                       help="sweep: --lengths at fixed --batch; table: fixed length/batch pairs")
    bench.add_argument("--budget", type=int, default=None, help="Cap on live floats per point")
    bench.add_argument("--out", type=Path, default=Path("bench.csv"))

    error = sub.add_parser("error", help="Separate approximation and relaxation errors")
    error.add_argument("--n", type=int, default=None)
    error.add_argument("--d", type=int, default=None)
    error.add_argument("--heads", type=int, default=None)
    error.add_argument("--nbar", type=_int_list, default=None)
    error.add_argument("--seeds", type=_int_list, default=None)
    error.add_argument("--out", type=Path, default=Path("error.csv"))

    report = sub.add_parser("report", help="Re-print the summary of a written CSV")
    report.add_argument("--csv", type=Path, required=True)

    return parser


def _pick(value, settings: dict, key: str, default):
    return value if value is not None else settings.get(key, default)


def resolve_config(args: argparse.Namespace, settings: dict) -> CliConfig:
    """Merge parsed flags over the configuration file values."""
    cmd = args.subcommand
    kwargs = {"subcommand": cmd, "seed": _pick(getattr(args, "seed", None), settings, "seed", config.SEED)}

    if cmd == "bench":
        kwargs.update(
            lengths=_pick(args.lengths, settings, "lengths", config.LENGTHS),
            scale=_pick(args.scale, settings, "scale", config.SCALE),
            kinds=_pick(args.kinds, settings, "kinds", config.KINDS),
            batch=_pick(args.batch, settings, "batch", config.BATCH),
            reps=_pick(args.reps, settings, "reps", config.REPS),
            warmup=_pick(args.warmup, settings, "warmup", config.WARMUP),
            d=_pick(args.d, settings, "d_model", config.D_MODEL),
            heads=_pick(args.heads, settings, "heads", config.HEADS),
            workload=_pick(args.workload, settings, "workload", config.WORKLOAD),
            fast_path=False if args.no_fft else bool(settings.get("fft_fast_path", config.FFT_FAST_PATH)),
            protocol=args.protocol,
            budget=_pick(args.budget, settings, "memory_budget_floats", config.MEMORY_BUDGET_FLOATS),
            out=args.out,
        )
        unknown = [k for k in kwargs["kinds"] if k not in {t.value for t in AttentionTag}]
        if unknown:
            raise UsageError(f"Unknown attention kinds in configuration: {unknown}")
    elif cmd == "error":
        kwargs.update(
            n=_pick(args.n, settings, "error_n", config.ERROR_N),
            d=_pick(args.d, settings, "error_d", config.ERROR_D),
            heads=_pick(args.heads, settings, "error_heads", config.ERROR_HEADS),
            n_bar_list=_pick(args.nbar, settings, "error_nbar", config.ERROR_NBAR),
            seeds=_pick(args.seeds, settings, "error_seeds", config.ERROR_SEEDS),
            fast_path=bool(settings.get("fft_fast_path", config.FFT_FAST_PATH)),
            out=args.out,
        )
    elif cmd == "report":
        kwargs.update(csv=args.csv)

    return CliConfig(**kwargs)


def _run_bench(cfg: CliConfig) -> int:
    options = dict(d=cfg.d, heads=cfg.heads, warmup=cfg.warmup, workload=cfg.workload,
                   fast_path=cfg.fast_path, memory_budget=cfg.budget)
    if cfg.protocol == "table":
        records = run_table_bench(cfg.kinds, cfg.scale, cfg.reps, cfg.seed, **options)
    else:
        records = run_scaling_bench(cfg.lengths, cfg.scale, cfg.kinds, cfg.batch,
                                    cfg.reps, cfg.seed, **options)

    write_csv(records, cfg.out, BenchRecord)
    print(format_bench_table(records))
    print()
    print(format_ratio_table(records))
    if not records:
        logger.error("Every benchmark point was skipped")
        return EXIT_FAILURE
    return EXIT_OK


def _run_error(cfg: CliConfig) -> int:
    records = run_error_profile(cfg.n, cfg.d, cfg.heads, cfg.n_bar_list, cfg.seeds,
                                fast_path=cfg.fast_path)
    write_csv(records, cfg.out, ErrorRecord)
    print(format_error_table(records))
    return EXIT_OK


def _run_report(cfg: CliConfig) -> int:
    record_type = detect_record_type(cfg.csv, [BenchRecord, ErrorRecord])
    records = read_csv(cfg.csv, record_type)
    if record_type is BenchRecord:
        print(format_bench_table(records))
        print()
        print(format_ratio_table(records))
    else:
        print(format_error_table(records))
    return EXIT_OK


def _run_selftest(cfg: CliConfig) -> int:
    failures = run_selftest(cfg.seed)
    if failures:
        print(f"FAILED: {', '.join(failures)}")
        return EXIT_FAILURE
    print("All properties hold")
    return EXIT_OK


_HANDLERS = {
    "selftest": _run_selftest,
    "bench": _run_bench,
    "error": _run_error,
    "report": _run_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Args:
        argv: Arguments without the program name (sys.argv[1:] when None)

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    if args.config is not None and not args.config.exists():
        print(f"Configuration file {args.config} does not exist", file=sys.stderr)
        return EXIT_USAGE
    try:
        settings = config.load_config(args.config) if args.config else config.config
        config.setup_logging(args.log_level or config.LOG_LEVEL,
                             settings.get("log_file", config.LOG_FILE))
    except (OSError, ValueError, yaml.YAMLError) as e:
        print(f"Could not load configuration: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        cfg = resolve_config(args, settings)
    except (UsageError, TypeError, ValueError) as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logger.info(f"Running {cfg.subcommand} (seed={cfg.seed})")
    try:
        return _HANDLERS[cfg.subcommand](cfg)
    except StorageError as e:
        logger.error(f"I/O failure: {e}", exc_info=True)
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"{cfg.subcommand} failed: {e}", exc_info=True)
        return EXIT_FAILURE

"""Configuration loading for DCT Attention."""
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
import yaml

# Load environment variables from .env file
load_dotenv()

# Project root directory
ROOT_DIR = Path(__file__).parent.parent

# Load config.yaml
CONFIG_FILE = ROOT_DIR / "config.yaml"


def load_config(path: Path = CONFIG_FILE) -> dict:
    """Read a yaml config file, returning an empty dict when it is missing."""
    if not Path(path).exists():
        return {}
    with open(path, 'r') as f:
        loaded = yaml.safe_load(f) or {}
    if not isinstance(loaded, dict):
        raise ValueError(f"{path} must contain a mapping of settings, got {type(loaded).__name__}")
    return loaded


config = load_config()

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = config.get("log_file")

# Model shape defaults (4 blocks, d=512, 8 heads, FF 2048)
D_MODEL = config.get("d_model", 512)
HEADS = config.get("heads", 8)
N_BLOCKS = config.get("n_blocks", 4)
D_FF = config.get("d_ff", 2048)
MAX_LEN = config.get("max_len", 4096)
VOCAB_SIZE = config.get("vocab_size", 30522)
LAYER_NORM_EPS = float(config.get("layer_norm_eps", 1e-12))
SEED = config.get("seed", 42)

# Benchmark protocol defaults
LENGTHS = config.get("lengths", [128, 512, 1024, 4096])
SCALE = config.get("scale", 0.25)
KINDS = config.get("kinds", ["vanilla", "dct"])
BATCH = config.get("batch", 1)
REPS = config.get("reps", 10)
WARMUP = config.get("warmup", 3)
WORKLOAD = config.get("workload", "multi-head")
FFT_FAST_PATH = config.get("fft_fast_path", True)
MEMORY_BUDGET_FLOATS = config.get("memory_budget_floats")

# Error profile defaults
ERROR_N = config.get("error_n", 64)
ERROR_D = config.get("error_d", 32)
ERROR_HEADS = config.get("error_heads", 1)
ERROR_NBAR = config.get("error_nbar", [8, 16, 32, 64])
ERROR_SEEDS = config.get("error_seeds", [1, 2, 3])


def setup_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE) -> None:
    """
    Configure root logging.

    Logs go to stderr so that standard output only carries result tables.

    Args:
        level: Logging level name (e.g. "INFO", "DEBUG")
        log_file: Optional path of an additional log file
    """
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True
    )

"""DCT Attention - compressed self-attention kernels and benchmarks

Entry point for the command-line interface:

    python main.py selftest --seed 42
    python main.py bench --lengths 128,512 --kinds vanilla,dct --out bench.csv
    python main.py error --n 64 --d 32 --nbar 8,16,32,64 --out error.csv
    python main.py report --csv bench.csv
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

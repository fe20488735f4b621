#!/usr/bin/env python3
"""Summary sizes for sum_16 split monolithically, as 4x4, and as 2x2x2x2."""
import argparse
import sys

from ttnesy.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/decomposition")
p.add_argument("--rank", default="2")
args = p.parse_args()

sys.exit(main(["ablate", "decomposition", "--splits", "16", "4x4", "2x2x2x2",
               "--onehot", "--onehot-root", "--rank", args.rank, "--out", args.out]))

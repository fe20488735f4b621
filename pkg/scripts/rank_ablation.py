#!/usr/bin/env python3
"""HWF-3 accuracy, parameter count and epoch time across sketch ranks."""
import argparse
import sys

from ttnesy.cli import main

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--out", default="runs/rank_ablation")
p.add_argument("--seeds", nargs="+", default=["0", "1", "2"])
p.add_argument("--epochs", default="20")
args = p.parse_args()

sys.exit(main(["ablate", "rank", "--task", "hwf_3", "--ranks", "2", "4", "8", "full",
               "--seeds", *args.seeds, "--epochs", args.epochs, "--batch-size", "16",
               "--param-length", "7", "--out", args.out]))

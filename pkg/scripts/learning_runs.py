#!/usr/bin/env python3
"""Weakly supervised training on sum_4, sum_16 and add_2 over several seeds.

Uses the same recipes as the acceptance suite and prints the final task
accuracy per run plus the median per task.
"""
import argparse
import statistics
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from test_acceptance import RECIPES, learning_run  # noqa: E402

p = argparse.ArgumentParser(description=__doc__)
p.add_argument("--tasks", nargs="+", default=list(RECIPES))
p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
args = p.parse_args()

for task in args.tasks:
    accs = []
    for seed in args.seeds:
        acc, cpu = learning_run(task, seed)
        accs.append(acc)
        print(f"{task} seed {seed}: task_acc {acc:.3f} ({cpu:.1f}s cpu)", flush=True)
    print(f"{task} median task_acc {statistics.median(accs):.3f}")

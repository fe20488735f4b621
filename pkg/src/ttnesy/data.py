"""Synthetic perceptual data standing in for handwritten symbols."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .program import HWF_OPS, ProgramGraph, builtin_task


class SyntheticSymbols:
    """Class-conditional Gaussians: ``x = mean[c] + N(0, I)``.

    Means are drawn from ``N(0, spread^2 I)`` and redrawn until every pair is
    at least ``min_distance`` apart.
    """

    def __init__(self, n_classes: int, dim: int = 16, seed: int = 0,
                 spread: float = 3.0, min_distance: float = 4.0):
        self.n_classes = n_classes
        self.dim = dim
        rng = np.random.default_rng(seed)
        for _ in range(1000):
            means = rng.normal(0.0, spread, size=(n_classes, dim))
            gaps = np.linalg.norm(means[:, None] - means[None], axis=-1)
            gaps[np.diag_indices(n_classes)] = np.inf
            if gaps.min() >= min_distance:
                break
        else:
            raise RuntimeError("could not place well-separated class means")
        self.means = means

    def sample(self, symbols, rng: np.random.Generator) -> np.ndarray:
        symbols = np.asarray(symbols)
        return self.means[symbols] + rng.standard_normal(symbols.shape + (self.dim,))


@dataclass
class Dataset:
    """``features``: (N, leaves, dim); ``symbols``: (N, leaves); ``labels``: per-example task output."""

    features: np.ndarray
    symbols: np.ndarray
    labels: list

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.symbols[idx], [self.labels[i] for i in idx])


# -- symbol samplers per task family -------------------------------------

def _uniform_digits(graph, n, rng):
    return rng.integers(0, graph.leaf_domains[0], size=(n, graph.n_leaves))


def _hwf_formulas(graph, n, rng):
    length = graph.n_leaves
    out = np.empty((n, length), dtype=np.int64)
    k = 0
    while k < n:
        r = np.empty(length, dtype=np.int64)
        r[0::2] = rng.integers(0, 10, size=(length + 1) // 2)
        r[1::2] = rng.integers(10, 10 + len(HWF_OPS), size=length // 2)
        if any(r[i] == 13 and r[i + 1] == 0 for i in range(1, length, 2)):
            continue
        out[k] = r
        k += 1
    return out


def random_sudoku(n: int, rng: np.random.Generator) -> np.ndarray:
    """A random valid ``n x n`` board (values 0..n-1) by shuffling a pattern board."""
    box = int(np.sqrt(n))
    base = np.array([[(box * (r % box) + r // box + c) % n for c in range(n)] for r in range(n)])
    bands = rng.permutation(box)
    rows = np.concatenate([b * box + rng.permutation(box) for b in bands])
    stacks = rng.permutation(box)
    cols = np.concatenate([s * box + rng.permutation(box) for s in stacks])
    board = base[rows][:, cols]
    return rng.permutation(n)[board]


def _visudo_boards(graph, n, rng):
    size = int(np.sqrt(graph.n_leaves))
    out = np.empty((n, graph.n_leaves), dtype=np.int64)
    for k in range(n):
        board = random_sudoku(size, rng).reshape(-1)
        if k % 2:
            cell = rng.integers(graph.n_leaves)
            board[cell] = (board[cell] + rng.integers(1, size)) % size
        out[k] = board
    return out


def symbol_sampler(graph: ProgramGraph):
    family = graph.name.split("_")[0]
    if family == "hwf":
        return _hwf_formulas
    if family == "visudo":
        return _visudo_boards
    return _uniform_digits


def make_dataset(graph: ProgramGraph, n: int, gen: SyntheticSymbols,
                 rng: np.random.Generator) -> Dataset:
    symbols = symbol_sampler(graph)(graph, n, rng)
    features = gen.sample(symbols, rng)
    labels = [graph.task_output(row) for row in symbols]
    return Dataset(features, symbols, labels)


def task_and_data(task: str, n_train: int, n_test: int, seed: int = 0, dim: int = 16):
    """Builtin graph plus train/test splits drawn from one synthetic generator."""
    graph = builtin_task(task)
    gen = SyntheticSymbols(graph.leaf_domains[0], dim=dim, seed=seed)
    rng = np.random.default_rng(seed + 1)
    return graph, gen, make_dataset(graph, n_train, gen, rng), make_dataset(graph, n_test, gen, rng)


"""Tensor-train sketches of summary tensors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .tensor_core import (
    FormatError,
    NumericError,
    as_tensor,
    check_budget,
    read_cts1,
    truncated_svd,
    write_cts1,
)

FULL = "full"
Rank = Union[int, str]

MANIFEST_NAME = "sketch.json"


@dataclass(frozen=True)
class SketchConfig:
    rank: Rank = FULL
    seed: int = 0

    def __post_init__(self):
        if self.rank != FULL and (not isinstance(self.rank, (int, np.integer)) or self.rank < 1):
            raise ValueError(f"rank must be a positive integer or {FULL!r}, got {self.rank!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @property
    def is_full(self) -> bool:
        return self.rank == FULL


def parse_rank(value) -> Rank:
    if isinstance(value, str):
        if value.lower() == FULL:
            return FULL
        value = int(value)
    if value < 1:
        raise ValueError(f"rank must be >= 1, got {value}")
    return int(value)


@dataclass(frozen=True)
class TTSketch:
    """Cores ``t_j`` of shape ``(r_{j-1}, n_j, r_j)`` with ``r_0 = r_d = 1``."""

    cores: tuple
    truncation_errors: tuple = field(default=())
    source_dims: tuple = field(default=())

    def __post_init__(self):
        cores = tuple(as_tensor(c) for c in self.cores)
        if not cores:
            raise ValueError("a sketch needs at least one core")
        for c in cores:
            if c.ndim != 3:
                raise ValueError(f"cores must be 3-way, got shape {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for a, b in zip(cores, cores[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond mismatch between cores {a.shape} and {b.shape}")
        object.__setattr__(self, "cores", cores)
        dims = tuple(c.shape[1] for c in cores)
        if not self.source_dims:
            object.__setattr__(self, "source_dims", dims)
        elif tuple(self.source_dims) != dims:
            raise ValueError(f"source_dims {self.source_dims} disagree with cores {dims}")
        else:
            object.__setattr__(self, "source_dims", tuple(int(d) for d in self.source_dims))
        errs = tuple(float(e) for e in (self.truncation_errors or ()))
        if not errs:
            errs = (0.0,) * (len(cores) - 1)
        if len(errs) != len(cores) - 1:
            raise ValueError("need exactly d-1 truncation errors")
        if any(e < 0 for e in errs):
            raise ValueError("truncation errors must be non-negative")
        object.__setattr__(self, "truncation_errors", errs)

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def parameter_count(self) -> int:
        return int(sum(c.size for c in self.cores))


def full_bond_ranks(dims: Sequence[int]) -> list:
    """Bond ranks that make TT-SVD exact: ``min(prod(dims[:j]), prod(dims[j:]))``."""
    dims = [int(d) for d in dims]
    out = []
    for j in range(1, len(dims)):
        out.append(min(int(np.prod(dims[:j])), int(np.prod(dims[j:]))))
    return out


def predicted_ranks(dims: Sequence[int], rank: Rank) -> tuple:
    """Bond ranks ``r_0..r_d`` a rank-``rank`` sketch of a generic tensor gets."""
    caps = full_bond_ranks(dims)
    if rank != FULL:
        caps = [min(c, int(rank)) for c in caps]
    return (1, *caps, 1)


def predicted_parameter_count(dims: Sequence[int], rank: Rank) -> int:
    r = predicted_ranks(dims, rank)
    return int(sum(r[j] * int(n) * r[j + 1] for j, n in enumerate(dims)))


def tt_svd(phi, cfg: SketchConfig = SketchConfig()) -> TTSketch:
    """Left-to-right TT-SVD sweep truncating every bond to ``cfg.rank``.

    With ``FULL`` rank nothing is discarded and every truncation error is 0.
    """
    phi = as_tensor(phi)
    if not np.all(np.isfinite(phi)):
        raise NumericError("summary tensor has non-finite entries")
    dims = phi.shape
    d = len(dims)
    if d == 1:
        return TTSketch((phi.reshape(1, dims[0], 1),), (), dims)

    caps = full_bond_ranks(dims)
    cores, errors = [], []
    rest = phi.reshape(dims[0], -1)
    r_prev = 1
    for j in range(d - 1):
        mat = rest.reshape(r_prev * dims[j], -1)
        if cfg.is_full:
            svd = truncated_svd(mat, caps[j], tol=0.0, seed=cfg.seed)
        else:
            svd = truncated_svd(mat, min(int(cfg.rank), caps[j]), seed=cfg.seed + j)
        r = svd.rank
        cores.append(svd.left.reshape(r_prev, dims[j], r))
        errors.append(svd.discarded_norm)
        rest = svd.singular_values[:, None] * svd.right_t
        r_prev = r
    cores.append(rest.reshape(r_prev, dims[-1], 1))
    return TTSketch(tuple(cores), tuple(errors), dims)


def tt_round(s: TTSketch, cfg: SketchConfig = SketchConfig()) -> TTSketch:
    """Recompress an existing tensor train without densifying it.

    Right-to-left QR orthogonalization followed by a left-to-right truncated
    SVD sweep; on an exact tensor train this yields the same truncation errors
    TT-SVD would on the dense tensor.
    """
    cores = [c.copy() for c in s.cores]
    d = len(cores)
    for j in range(d - 1, 0, -1):
        r0, n, r1 = cores[j].shape
        q, r = np.linalg.qr(cores[j].reshape(r0, n * r1).T)
        cores[j] = q.T.reshape(-1, n, r1)
        cores[j - 1] = np.tensordot(cores[j - 1], r.T, axes=(2, 0))
    errors = []
    for j in range(d - 1):
        r0, n, r1 = cores[j].shape
        max_rank = r0 * n if cfg.is_full else min(int(cfg.rank), r0 * n, r1)
        tol = 0.0 if cfg.is_full else 1e-12
        svd = truncated_svd(cores[j].reshape(r0 * n, r1), max(1, min(max_rank, r1)),
                            tol=tol, seed=cfg.seed + j)
        k = svd.rank
        cores[j] = svd.left.reshape(r0, n, k)
        carry = svd.singular_values[:, None] * svd.right_t
        cores[j + 1] = np.tensordot(carry, cores[j + 1], axes=(1, 0))
        errors.append(svd.discarded_norm)
    return TTSketch(tuple(cores), tuple(errors), s.source_dims)


def reconstruct(s: TTSketch, budget: int | None = None) -> np.ndarray:
    """Densify a sketch (verification only)."""
    total = int(np.prod(s.source_dims))
    check_budget(total, "reconstructing a sketch", budget)
    out = s.cores[0].reshape(s.cores[0].shape[1], -1)
    for core in s.cores[1:]:
        r0, n, r1 = core.shape
        out = (out @ core.reshape(r0, n * r1)).reshape(-1, r1)
    return out.reshape(s.source_dims)


def reconstruction_error_bound(s: TTSketch) -> float:
    """Root-sum-square of the per-bond truncation errors."""
    return float(np.sqrt(sum(e * e for e in s.truncation_errors)))


# -- persistence ------------------------------------------------------------

def save_sketch(s: TTSketch, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for j, core in enumerate(s.cores):
        name = f"core_{j}.cts1"
        write_cts1(directory / name, core)
        names.append(name)
    manifest = {
        "format": "tt-sketch/1",
        "core_count": s.ndim,
        "ranks": list(s.ranks),
        "source_dims": list(s.source_dims),
        "truncation_errors": list(s.truncation_errors),
        "cores": names,
    }
    if extra:
        manifest.update(extra)
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_sketch(directory) -> TTSketch:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST_NAME).read_text())
        cores = tuple(read_cts1(directory / name) for name in manifest["cores"])
        if len(cores) != manifest["core_count"]:
            raise FormatError(f"{directory}: manifest lists {manifest['core_count']} cores")
        s = TTSketch(cores, tuple(manifest["truncation_errors"]), tuple(manifest["source_dims"]))
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"{directory}: bad sketch manifest ({exc!r})") from None
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(f"{directory}: {exc}") from None
    if list(s.ranks) != list(manifest["ranks"]):
        raise FormatError(f"{directory}: core shapes disagree with manifest ranks {manifest['ranks']}")
    return s

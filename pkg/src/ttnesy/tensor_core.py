"""Dense tensors, matricization, truncated SVD and the CTS1 tensor file format.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order.  ``as_tensor`` is the single gate that enforces that.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_ELEMENT_BUDGET = 2**27
EXACT_SVD_MAX_DIM = 512
OVERSAMPLING = 8
POWER_ITERATIONS = 2
RANK_RTOL = 1e-12

CTS1_MAGIC = b"CTS1"


class ResourceError(RuntimeError):
    """Raised when an operation would exceed the element budget."""


class NumericError(ValueError):
    """Raised on non-finite input to a numerical routine."""


class FormatError(ValueError):
    """Raised when a tensor file is truncated or malformed."""


def element_budget() -> int:
    """Element budget for dense enumeration/reconstruction (env ``CTS_ELEMENT_BUDGET``)."""
    raw = os.environ.get("CTS_ELEMENT_BUDGET")
    if raw is None or raw.strip() == "":
        return DEFAULT_ELEMENT_BUDGET
    return int(raw)


def check_budget(n_elements: int, what: str, budget: int | None = None) -> None:
    budget = element_budget() if budget is None else budget
    if n_elements > budget:
        raise ResourceError(
            f"{what} needs {n_elements:.3g} elements, over the budget of {budget} "
            "(set CTS_ELEMENT_BUDGET to raise it)"
        )


def as_tensor(data, dims=None) -> np.ndarray:
    """Coerce ``data`` to a contiguous float64 array, optionally reshaped to ``dims``."""
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"invalid dims {dims}")
        if int(np.prod(dims)) != arr.size:
            raise ValueError(f"dims {dims} do not match {arr.size} elements")
        arr = arr.reshape(dims)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


def unfold(t: np.ndarray, split_axis: int) -> np.ndarray:
    """Matricize ``t`` with axes ``< split_axis`` as rows and the rest as columns."""
    t = np.asarray(t)
    if not 1 <= split_axis < t.ndim:
        raise ValueError(f"split_axis must be in [1, {t.ndim - 1}], got {split_axis}")
    rows = int(np.prod(t.shape[:split_axis]))
    return t.reshape(rows, -1)


def refold(m: np.ndarray, dims) -> np.ndarray:
    return np.asarray(m).reshape(tuple(dims))


def frobenius_norm(t) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


@dataclass(frozen=True)
class SvdResult:
    left: np.ndarray
    singular_values: np.ndarray
    right_t: np.ndarray
    discarded_norm: float

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right_t


def _numerical_rank(s: np.ndarray, tol: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 1
    return max(1, int(np.count_nonzero(s > tol * s[0])))


def randomized_svd(m: np.ndarray, k: int, seed: int = 0,
                   oversampling: int = OVERSAMPLING,
                   power_iterations: int = POWER_ITERATIONS):
    """Randomized range finder with subspace (power) iteration.

    Returns the leading ``k`` triplets ``(u, s, vt)``.
    """
    rng = np.random.default_rng(seed)
    n_rows, n_cols = m.shape
    ell = min(k + oversampling, n_rows, n_cols)
    omega = rng.standard_normal((n_cols, ell))
    q, _ = np.linalg.qr(m @ omega)
    for _ in range(power_iterations):
        z, _ = np.linalg.qr(m.T @ q)
        q, _ = np.linalg.qr(m @ z)
    b = q.T @ m
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ ub
    return u[:, :k], s[:k], vt[:k]


def truncated_svd(m, max_rank: int, tol: float = RANK_RTOL, seed: int = 0) -> SvdResult:
    """Rank-limited SVD of a matrix.

    Keeps ``min(max_rank, numerical rank)`` triplets, where singular values
    at or below ``tol * sigma_max`` count as zero.  Matrices whose smaller
    side exceeds ``EXACT_SVD_MAX_DIM`` go through the randomized path whenever
    the requested rank is small enough for it to pay off.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"truncated_svd expects a matrix, got {m.ndim} axes")
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    if not np.all(np.isfinite(m)):
        raise NumericError("matrix has non-finite entries")

    min_dim = min(m.shape)
    use_randomized = min_dim > EXACT_SVD_MAX_DIM and max_rank + OVERSAMPLING < min_dim
    if use_randomized:
        u, s, vt = randomized_svd(m, min(max_rank, min_dim), seed=seed)
        k = min(max_rank, _numerical_rank(s, tol))
        u, s, vt = u[:, :k], s[:k], vt[:k]
        # residual is measured directly: subtracting squared norms cancels badly
        discarded = frobenius_norm(m - (u * s) @ vt)
    else:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        k = min(max_rank, _numerical_rank(s, tol))
        discarded = float(np.sqrt(np.sum(s[k:] ** 2)))
        u, s, vt = u[:, :k], s[:k], vt[:k]
    return SvdResult(np.ascontiguousarray(u), np.ascontiguousarray(s),
                     np.ascontiguousarray(vt), discarded)


# -- CTS1 binary format -----------------------------------------------------

def write_cts1(path, t) -> None:
    """Write ``t`` as magic ``CTS1``, u32 axis count, u64 dims, f64 data (all little-endian)."""
    t = np.ascontiguousarray(t, dtype=np.float64)
    dims = t.shape if t.ndim else (1,)
    with open(path, "wb") as fh:
        fh.write(CTS1_MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        fh.write(t.astype("<f8", copy=False).tobytes(order="C"))


def read_cts1(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != CTS1_MAGIC:
        raise FormatError(f"{path}: not a CTS1 file")
    try:
        (ndim,) = struct.unpack_from("<I", raw, 4)
        if ndim < 1:
            raise FormatError(f"{path}: zero axes")
        dims = struct.unpack_from(f"<{ndim}Q", raw, 8)
    except struct.error:
        raise FormatError(f"{path}: truncated header") from None
    offset = 8 + 8 * ndim
    count = int(np.prod(dims))
    if len(raw) - offset != 8 * count:
        raise FormatError(f"{path}: expected {count} values, found {(len(raw) - offset) / 8:g}")
    data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)

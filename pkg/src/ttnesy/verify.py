"""Independent oracles: brute-force weighted model counting, error-bound checks
and finite-difference gradients.

Nothing here calls the contraction code in ``inference``; enumeration is done
with plain loops over the input grid.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .program import OutputKind, ProgramGraph, SubProgram, as_symbol
from .sketch import SketchConfig, TTSketch, reconstruct, reconstruction_error_bound, tt_svd
from .tensor_core import ResourceError, frobenius_norm

MAX_WMC_TUPLES = 10**7


@dataclass(frozen=True)
class WmcQuery:
    """``program`` is a graph or a single sub-program; ``node`` picks a graph node (root by default)."""

    program: ProgramGraph | SubProgram
    leaf_dists: Sequence
    target: object = None
    node: int | None = None


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    bound: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{mark}  {self.name:<32} measured={self.measured:.4g}  bound={self.bound:.4g}{extra}"


def _supports(dists):
    out = []
    for p in dists:
        p = np.asarray(p, dtype=np.float64)
        out.append([(i, float(p[i])) for i in range(len(p)) if p[i] != 0.0])
    return out


def _enumerate(dists):
    """Yield ``(tuple, weight)`` over every tuple with non-zero probability."""
    supports = _supports(dists)
    count = math.prod(len(s) for s in supports)
    if count > MAX_WMC_TUPLES:
        raise ResourceError(f"exact WMC would enumerate {count:.3g} tuples (limit {MAX_WMC_TUPLES:.0e})")
    for combo in itertools.product(*supports):
        w = 1.0
        for _, pi in combo:
            w *= pi
        yield tuple(i for i, _ in combo), w


def wmc_exact(q: WmcQuery):
    """Exact WMC by enumeration.

    VALUE outputs: the expectation ``sum_y y * WMC(y)`` (or ``WMC(target)``).
    Symbol outputs: the vector ``WMC(y)`` over every output symbol (or the
    entry for ``target``).  One-to-many programs count a tuple towards every
    output it allows, so that vector need not sum to 1.
    """
    prog = q.program
    if isinstance(prog, SubProgram):
        kind, size = prog.output_kind, prog.output_size
        run = lambda r: prog(*r)  # noqa: E731
        is_scalar = kind is OutputKind.VALUE and q.target is None
    else:
        node = prog.root if q.node is None else q.node
        sp = prog.node_program(node)
        kind, size = sp.output_kind, sp.output_size
        run = lambda r: prog.execute(r)[node]  # noqa: E731
        is_scalar = (kind is OutputKind.VALUE and q.target is None
                     and (size is None or (node == prog.root and prog.readout == "value")))

    if is_scalar:
        total = 0.0
        for r, w in _enumerate(q.leaf_dists):
            total += w * run(r)
        return total

    wmc = np.zeros(size)
    for r, w in _enumerate(q.leaf_dists):
        out = run(r)
        if out is None:
            continue
        if kind is OutputKind.VALUE:
            wmc[int(round(out))] += w
        else:
            for y in out:
                wmc[y] += w
    if q.target is not None:
        return float(wmc[int(q.target)])
    return wmc


def wmc_task_distribution(g: ProgramGraph, leaf_dists) -> dict:
    """Probability of every task output (e.g. digit tuples) by enumeration."""
    out: dict = {}
    for r, w in _enumerate(leaf_dists):
        y = g.task_output(r)
        out[y] = out.get(y, 0.0) + w
    return out


def normalized(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    s = v.sum()
    return v / s if s > 0 else np.full_like(v, 1.0 / len(v))


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def rbf_reference(v: float, support: int, sigma: float, squared: bool = False) -> list:
    w = []
    for j in range(support):
        d = (v - j) ** 2 if squared else abs(v - j)
        w.append(math.exp(-d / (2 * sigma * sigma)))
    s = sum(w)
    return [x / s for x in w]


def wmc_layered(g: ProgramGraph, leaf_dists, sigma: float = 0.5, squared: bool = False) -> list:
    """Per-node exact WMC treating each node's inputs as independent.

    This is the quantity layered inference computes; on tree-shaped graphs it
    coincides with the whole-program WMC.  VALUE nodes below the scalar root
    are turned into distributions with the RBF formula.
    """
    outs: list = []
    for i, node in enumerate(g.nodes):
        sp = g.sub_programs[node.sub_program]
        ins = [leaf_dists[w.index] if w.kind == "leaf" else outs[w.index] for w in node.inputs]
        scalar_root = i == g.root and g.readout == "value" and sp.output_kind is OutputKind.VALUE
        if sp.output_kind is OutputKind.VALUE:
            v = wmc_exact(WmcQuery(sp, ins))
            outs.append(v if scalar_root else np.array(rbf_reference(v, sp.output_size, sigma, squared)))
        else:
            outs.append(normalized(wmc_exact(WmcQuery(sp, ins))))
    return outs


def wmc_tensor_form(phi_oh: np.ndarray, dists) -> np.ndarray:
    """WMC as the contraction of the one-hot summary with the product of input distributions."""
    out = np.asarray(phi_oh, dtype=np.float64)
    for p in dists:
        out = np.tensordot(np.asarray(p, dtype=np.float64), out, axes=(0, 0))
    return out


# -- bound checks -----------------------------------------------------------

def check_tt_error_bound(phi, cfg: SketchConfig | None = None, sketch: TTSketch | None = None,
                slack: float = 1e-8) -> CheckResult:
    """``||phi - T||_F <= sqrt(sum eps_k^2)`` via explicit reconstruction."""
    phi = np.asarray(phi, dtype=np.float64)
    s = sketch if sketch is not None else tt_svd(phi, cfg or SketchConfig())
    err = frobenius_norm(phi - reconstruct(s))
    bound = reconstruction_error_bound(s)
    return CheckResult("tt_error_bound", err, bound, err <= bound + slack,
                       f"ranks={list(s.ranks)}")


def _onehot_rows(values: np.ndarray, size: int) -> np.ndarray:
    # rint, not floor(x + 0.5): the latter rounds 0.49999999999999994 up
    idx = np.clip(np.rint(values), 0, size - 1).astype(np.int64)
    out = np.zeros(values.shape + (size,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


@dataclass(frozen=True)
class OnehotBoundResult:
    check: CheckResult
    far_cells: int
    cell_bound: int
    differing_rows: int
    max_row_difference: int

    @property
    def passed(self) -> bool:
        return (self.check.passed and self.far_cells <= self.cell_bound
                and self.differing_rows <= self.far_cells and self.max_row_difference in (0, 2))


def check_onehot_bound(phi, output_size: int, sketch: TTSketch, p, slack: float = 1e-8) -> OnehotBoundResult:
    """Output-distribution error of one-hot encodings of ``phi`` and its reconstruction.

    ``phi`` holds integer outputs in ``0..output_size-1``; the reconstruction is
    one-hot encoded at its nearest symbol.  ``p`` is a weight tensor over the
    input grid (e.g. the outer product of input distributions).
    """
    phi = np.asarray(phi, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    t = reconstruct(sketch)
    phi_oh = _onehot_rows(phi, output_size)
    t_oh = _onehot_rows(t, output_size)
    diff = (phi_oh - t_oh).reshape(-1, output_size)
    lhs = float(np.linalg.norm(diff.T @ p.reshape(-1)))
    err2 = frobenius_norm(phi - t) ** 2
    cell_bound = int(math.floor(4 * err2))
    rhs = math.sqrt(2) * frobenius_norm(p) * math.sqrt(cell_bound)
    far = int(np.count_nonzero(np.abs(phi - t) >= 0.5))
    row_diffs = np.count_nonzero(diff, axis=1)
    check = CheckResult("onehot_output_bound", lhs, rhs, lhs <= rhs + slack,
                        f"far_cells={far} cell_bound={cell_bound}")
    return OnehotBoundResult(check, far, cell_bound, int(np.count_nonzero(row_diffs)),
                       int(row_diffs.max()) if row_diffs.size else 0)


def finite_difference(f: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at every coordinate of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = f(x)
        flat[k] = orig - h
        down = f(x)
        flat[k] = orig
        gf[k] = (up - down) / (2 * h)
    return g


def relative_error(a, b, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def grad_check(f: Callable, x, analytic, h: float = 1e-5, tol: float = 1e-4,
               name: str = "gradient") -> CheckResult:
    fd = finite_difference(f, x, h)
    err = relative_error(analytic, fd)
    return CheckResult(name, err, tol, err <= tol)


def symbolic_outputs(g: ProgramGraph, symbols) -> list:
    """Symbol carried by each node for concrete leaves (``None`` if ambiguous)."""
    return [as_symbol(o) for o in g.execute(symbols)]

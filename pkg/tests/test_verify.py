import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FROZEN, sum_distribution
from ttnesy.program import (
    OutputKind,
    SubProgram,
    build_summary,
    builtin_sum_decomposed,
    builtin_task,
    nary_sum,
    pairwise_sum,
)
from ttnesy.sketch import SketchConfig, tt_svd
from ttnesy.tensor_core import ResourceError
from ttnesy.verify import (
    CheckResult,
    WmcQuery,
    check_tt_error_bound,
    check_onehot_bound,
    grad_check,
    normalized,
    total_variation,
    wmc_exact,
    wmc_task_distribution,
    wmc_tensor_form,
)


def onehot(i, n):
    p = np.zeros(n)
    p[i] = 1.0
    return p


def test_point_mass():
    g = builtin_task("sum_4")
    q = WmcQuery(g, [onehot(d, 10) for d in (1, 2, 3, 4)])
    assert wmc_exact(q) == 10.0


def test_uniform_two_digit():
    u = np.full(10, 0.1)
    sp = pairwise_sum(10, 10, onehot=True)
    assert wmc_exact(WmcQuery(sp, [u, u], target=0)) == pytest.approx(FROZEN["uniform_two_digit_p0"])
    assert wmc_exact(WmcQuery(pairwise_sum(10, 10), [u, u])) == pytest.approx(9.0)


def test_budget():
    with pytest.raises(ResourceError):
        wmc_exact(WmcQuery(builtin_task("sum_8"), [np.full(10, 0.1)] * 8))


@settings(max_examples=50, deadline=None)
@given(dims=st.lists(st.integers(1, 4), min_size=1, max_size=3), out=st.integers(1, 5),
       seed=st.integers(0, 10**6))
def test_matches_tensor_form(dims, out, seed):
    rng = np.random.default_rng(seed)
    lookup = rng.integers(0, 2, size=tuple(dims) + (out,))
    sp = SubProgram("rand", tuple(dims), OutputKind.ONEHOT,
                    lambda *r: {y for y in range(out) if lookup[r + (y,)]}, out)
    ps = [rng.dirichlet(np.ones(d)) for d in dims]
    np.testing.assert_allclose(wmc_exact(WmcQuery(sp, ps)),
                               wmc_tensor_form(build_summary(sp), ps), atol=1e-12)


def test_matches_sum_oracle():
    rng = np.random.default_rng(0)
    ps = [rng.dirichlet(np.ones(10)) for _ in range(3)]
    dist = wmc_task_distribution(builtin_sum_decomposed([3]), ps)
    ref = sum_distribution(ps)
    assert set(dist) == {float(k) for k in ref}
    for k, v in ref.items():
        assert dist[float(k)] == pytest.approx(v)


@pytest.mark.parametrize("task, mono", [("sum_4", "sumdec_4"), ("add_2_oh", None), ("visudo_4", None)])
def test_decomposition_soundness(task, mono):
    """Task-output distribution of the decomposed graph equals the monolithic program's."""
    g = builtin_task(task)
    rng = np.random.default_rng(1)
    if task == "visudo_4":
        # 4^16 boards: check on near-deterministic boards with a few uncertain cells
        from ttnesy.data import random_sudoku
        ps = [onehot(v, 4) for v in random_sudoku(4, rng).ravel()]
        for c in (0, 5, 10):
            ps[c] = rng.dirichlet(np.ones(4))
        mono_fn = lambda r: int(_valid(np.reshape(r, (4, 4))))  # noqa: E731
    else:
        ps = [rng.dirichlet(np.ones(d)) for d in g.leaf_domains]
        if mono:
            sp = nary_sum(4, 10)
            mono_fn = lambda r: float(sp(*r))  # noqa: E731
        else:
            mono_fn = _add2
    got = wmc_task_distribution(g, ps)
    want = _monolithic(mono_fn, ps)
    keys = set(got) | set(want)
    assert sum(abs(got.get(k, 0) - want.get(k, 0)) for k in keys) / 2 <= 1e-9


def _valid(board):
    from oracles import sudoku_valid
    return sudoku_valid(board)


def _add2(r):
    from oracles import add_digits
    return add_digits(list(r[:2]), list(r[2:]))


def _monolithic(fn, ps):
    import itertools
    out = {}
    supports = [np.flatnonzero(p) for p in ps]
    for r in itertools.product(*supports):
        w = np.prod([p[i] for p, i in zip(ps, r)])
        y = fn(r)
        out[y] = out.get(y, 0.0) + w
    return out


@settings(max_examples=100, deadline=None)
@given(dims=st.lists(st.integers(1, 8), min_size=2, max_size=4), rank=st.integers(1, 4),
       seed=st.integers(0, 10**6))
def test_tt_error_bound(dims, rank, seed):
    phi = np.random.default_rng(seed).normal(size=dims)
    assert check_tt_error_bound(phi, SketchConfig(rank=rank, seed=seed)).passed


@settings(max_examples=100, deadline=None)
@given(dims=st.lists(st.integers(2, 6), min_size=2, max_size=3), out=st.integers(2, 8),
       rank=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_onehot_bound(dims, out, rank, seed):
    rng = np.random.default_rng(seed)
    phi = rng.integers(0, out, size=dims).astype(float)
    p = np.ones(1)
    for d in dims:
        p = np.multiply.outer(p, rng.dirichlet(np.ones(d)))
    r = check_onehot_bound(phi, out, tt_svd(phi, SketchConfig(rank=rank)), p.reshape(dims))
    assert r.check.passed
    assert r.far_cells <= r.cell_bound
    assert r.max_row_difference in (0, 2)
    assert r.passed


def test_onehot_bound_exact_sketch_has_no_far_cells():
    phi = np.add.outer(np.arange(10.0), np.arange(10.0))
    r = check_onehot_bound(phi, 19, tt_svd(phi, SketchConfig(rank=2)), np.full((10, 10), 0.01))
    assert r.far_cells == 0 and r.check.measured == pytest.approx(0.0, abs=1e-12)


def test_grad_check_detects_wrong_gradient():
    f = lambda x: float(np.sum(x**3))  # noqa: E731
    x = np.array([1.0, -2.0, 0.5])
    assert grad_check(f, x, 3 * x**2).passed
    assert not grad_check(f, x, 2 * x).passed


def test_helpers():
    np.testing.assert_allclose(normalized([1, 3]), [0.25, 0.75])
    np.testing.assert_allclose(normalized([0, 0]), [0.5, 0.5])
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert CheckResult("x", 1.0, 2.0, True).line().startswith("PASS")

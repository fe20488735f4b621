import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import singular_values_by_jacobi
from ttnesy.tensor_core import (
    EXACT_SVD_MAX_DIM,
    FormatError,
    NumericError,
    ResourceError,
    as_tensor,
    check_budget,
    frobenius_norm,
    read_cts1,
    refold,
    truncated_svd,
    unfold,
    write_cts1,
)

dims_strategy = st.lists(st.integers(1, 5), min_size=2, max_size=4)


def test_unfold_identity_on_matrix():
    t = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(unfold(t, 1), t)


def test_unfold_index_arithmetic():
    t = np.random.default_rng(0).normal(size=(2, 3, 4))
    m = unfold(t, 2)
    assert m.shape == (6, 4)
    for i in range(2):
        for j in range(3):
            for k in range(4):
                assert m[i * 3 + j, k] == t[i, j, k]


@pytest.mark.parametrize("axis", [0, 3, -1])
def test_unfold_rejects_bad_axis(axis):
    with pytest.raises(ValueError):
        unfold(np.zeros((2, 3, 4)), axis)


@settings(max_examples=40, deadline=None)
@given(dims=dims_strategy, seed=st.integers(0, 2**16), data=st.data())
def test_unfold_refold_bijection(dims, seed, data):
    t = np.random.default_rng(seed).normal(size=dims)
    axis = data.draw(st.integers(1, len(dims) - 1))
    np.testing.assert_array_equal(refold(unfold(t, axis), dims), t)


def test_as_tensor_validates_dims():
    assert as_tensor([1, 2, 3, 4], (2, 2)).shape == (2, 2)
    with pytest.raises(ValueError):
        as_tensor([1, 2, 3], (2, 2))
    with pytest.raises(ValueError):
        as_tensor([1.0], (0,))


@pytest.mark.parametrize("t, expected", [
    (np.zeros((3, 4)), 0.0),
    (np.array([3.0]), 3.0),
    (np.ones((2, 2)), 2.0),
])
def test_frobenius_norm(t, expected):
    assert frobenius_norm(t) == pytest.approx(expected)


def test_svd_identity():
    r = truncated_svd(np.eye(4), 4)
    np.testing.assert_allclose(r.singular_values, 1.0)
    assert r.discarded_norm == pytest.approx(0.0, abs=1e-14)


def test_svd_rank_one():
    rng = np.random.default_rng(1)
    m = np.outer(rng.normal(size=7), rng.normal(size=5))
    r = truncated_svd(m, 1)
    assert r.discarded_norm <= 1e-10
    np.testing.assert_allclose(r.reconstruct(), m, atol=1e-12)


def test_svd_discarded_norm_matches_jacobi_oracle():
    m = np.random.default_rng(2).normal(size=(50, 40))
    r = truncated_svd(m, 10)
    s = singular_values_by_jacobi(m)
    expected = np.sqrt(np.sum(s[10:] ** 2))
    assert abs(r.discarded_norm - expected) <= 1e-6
    np.testing.assert_allclose(r.singular_values, s[:10], rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 60), n=st.integers(1, 60), k=st.integers(1, 70), seed=st.integers(0, 999))
def test_svd_invariants(m, n, k, seed):
    a = np.random.default_rng(seed).normal(size=(m, n))
    r = truncated_svd(a, k)
    s = r.singular_values
    assert np.all(np.diff(s) <= 1e-12) and np.all(s >= 0)
    np.testing.assert_allclose(r.left.T @ r.left, np.eye(r.rank), atol=1e-8)
    np.testing.assert_allclose(r.right_t @ r.right_t.T, np.eye(r.rank), atol=1e-8)
    norm = frobenius_norm(a)
    resid = frobenius_norm(a - r.reconstruct())
    assert abs(resid - r.discarded_norm) <= 1e-6 * max(norm, 1.0)
    assert r.discarded_norm**2 + frobenius_norm(r.reconstruct()) ** 2 == pytest.approx(norm**2, rel=1e-6)


@pytest.mark.parametrize("size", [10, 80, 200])
def test_svd_full_rank_is_exact(size):
    a = np.random.default_rng(size).normal(size=(size, size))
    r = truncated_svd(a, size)
    assert frobenius_norm(a - r.reconstruct()) <= 1e-9 * frobenius_norm(a)


def test_svd_errors():
    with pytest.raises(ValueError):
        truncated_svd(np.zeros((2, 2, 2)), 1)
    with pytest.raises(ValueError):
        truncated_svd(np.eye(3), 0)
    bad = np.eye(3)
    bad[0, 1] = np.nan
    with pytest.raises(NumericError):
        truncated_svd(bad, 2)


def test_randomized_path_is_deterministic_and_accurate():
    n = EXACT_SVD_MAX_DIM + 88
    i = np.arange(n, dtype=np.float64)
    m = i[:, None] + i[None, :]          # rank 2
    a = truncated_svd(m, 2, seed=3)
    b = truncated_svd(m, 2, seed=3)
    np.testing.assert_array_equal(a.singular_values, b.singular_values)
    assert frobenius_norm(m - a.reconstruct()) <= 1e-8 * frobenius_norm(m)
    assert abs(frobenius_norm(m - a.reconstruct()) - a.discarded_norm) <= 1e-6 * frobenius_norm(m)


def test_budget(monkeypatch):
    check_budget(10, "x", budget=10)
    with pytest.raises(ResourceError):
        check_budget(11, "x", budget=10)
    monkeypatch.setenv("CTS_ELEMENT_BUDGET", "5")
    with pytest.raises(ResourceError):
        check_budget(6, "x")


def test_cts1_byte_layout(tmp_path):
    t = np.arange(6.0).reshape(2, 3)
    p = tmp_path / "t.cts1"
    write_cts1(p, t)
    raw = p.read_bytes()
    assert raw[:4] == b"CTS1"
    assert raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:16] == (2).to_bytes(8, "little") and raw[16:24] == (3).to_bytes(8, "little")
    assert np.frombuffer(raw[24:], "<f8").tolist() == list(range(6))
    np.testing.assert_array_equal(read_cts1(p), t)


def test_cts1_rejects_corruption(tmp_path):
    p = tmp_path / "t.cts1"
    write_cts1(p, np.ones((3, 3)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_cts1(p)
    p.write_bytes(b"XXXX")
    with pytest.raises(FormatError):
        read_cts1(p)

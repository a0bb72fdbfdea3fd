import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from dlnk.errors import DofTooSmall, EigenvalueViolation, NotPositiveDefinite, NotSymmetric
from dlnk.rng import RngStream, map_chunks, set_threads
from dlnk.spd import (
    cholesky,
    is_spd,
    kron,
    logdet_spd,
    sample_matrix_normal,
    sample_wishart,
    wishart_laplace_check,
    wishart_laplace_closed_form,
)


def test_cholesky_identity_and_diagonal():
    np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(cholesky([[4.0, 0.0], [0.0, 9.0]]), [[2.0, 0.0], [0.0, 3.0]])


def test_cholesky_rebuilds_input():
    m = np.array([[2.0, 1.0], [1.0, 2.0]])
    low = cholesky(m)
    assert np.allclose(np.tril(low), low)
    np.testing.assert_allclose(low @ low.T, m, atol=1e-12)


def test_cholesky_rejects_bad_input():
    with pytest.raises(NotSymmetric):
        cholesky([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])
    # rank one: the second pivot is rounding noise and must be rejected
    v = np.array([1.0, 2.0, 3.0])
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.outer(v, v))


spd_seeds = st.integers(min_value=0, max_value=2**32 - 1)


@given(spd_seeds, st.integers(1, 5))
@settings(max_examples=40, deadline=None)
def test_cholesky_property(seed, dim):
    g = np.random.default_rng(seed)
    a = g.normal(size=(dim, dim))
    m = a @ a.T + 0.1 * np.eye(dim)
    low = cholesky(m)
    assert np.all(np.diag(low) > 0)
    np.testing.assert_allclose(low @ low.T, m, rtol=1e-10, atol=1e-12)
    assert logdet_spd(m) == pytest.approx(np.linalg.slogdet(m)[1], rel=1e-10, abs=1e-12)


def test_cholesky_batched():
    g = np.random.default_rng(0)
    a = g.normal(size=(5, 3, 3))
    m = a @ np.swapaxes(a, -1, -2) + np.eye(3)
    low = cholesky(m)
    np.testing.assert_allclose(low @ np.swapaxes(low, -1, -2), m, atol=1e-12)
    assert is_spd(m) and not is_spd(-m)


def test_kron_examples():
    np.testing.assert_array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))
    b = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(kron([[2.0]], b), 2 * b)


@given(arrays(float, (2, 3), elements=st.floats(-3, 3)), arrays(float, (3, 2), elements=st.floats(-3, 3)))
@settings(max_examples=30, deadline=None)
def test_kron_matches_numpy(a, b):
    np.testing.assert_allclose(kron(a, b), np.kron(a, b))


def test_kron_inverse_identity():
    g = np.random.default_rng(1)
    a0, b0 = g.normal(size=(3, 3)), g.normal(size=(2, 2))
    a, b = a0 @ a0.T + np.eye(3), b0 @ b0.T + np.eye(2)
    prod = kron(a, b) @ kron(np.linalg.inv(a), np.linalg.inv(b))
    np.testing.assert_allclose(prod, np.eye(6), atol=1e-10)


def test_wishart_mean_within_mc_error():
    n, dim, draws = 6, 3, 100_000
    w = sample_wishart(dim, n, np.eye(dim) / n, RngStream(4), size=draws)
    mean = w.mean(axis=0)
    se = w.std(axis=0, ddof=1) / np.sqrt(draws)
    assert np.all(np.abs(mean - np.eye(dim)) <= 4 * se)


def test_wishart_scalar_is_gamma():
    n = 5
    w = sample_wishart(1, n, [[1.0 / n]], RngStream(9), size=100_000)[:, 0, 0]
    ks = stats.kstest(w, stats.gamma(a=n / 2, scale=2 / n).cdf)
    # critical value of the KS statistic at the 1e-3 level
    assert ks.statistic < 1.95 / np.sqrt(w.size)


def test_wishart_needs_dof_above_dim():
    with pytest.raises(DofTooSmall):
        sample_wishart(3, 3, np.eye(3), 0)


def test_matrix_normal_kronecker_covariance():
    g = np.random.default_rng(2)
    r0, c0 = g.normal(size=(2, 2)), g.normal(size=(3, 3))
    row, col = r0 @ r0.T + np.eye(2), c0 @ c0.T + np.eye(3)
    z = sample_matrix_normal(2, 3, row, col, RngStream(3), size=100_000)
    vec = np.swapaxes(z, -1, -2).reshape(z.shape[0], -1)   # column-stacking vec
    emp = vec.T @ vec / vec.shape[0]
    target = np.kron(col, row)
    prods = vec[:, :, None] * vec[:, None, :]
    se = prods.std(axis=0, ddof=1) / np.sqrt(vec.shape[0])
    assert np.all(np.abs(emp - target) <= 4 * se)


def test_matrix_normal_standard_entries():
    z = sample_matrix_normal(3, 2, np.eye(3), np.eye(2), RngStream(5), size=100_000)
    se = z.std(axis=0, ddof=1) / np.sqrt(z.shape[0])
    assert np.all(np.abs(z.mean(axis=0)) <= 4 * se)


def test_laplace_closed_form_examples():
    assert wishart_laplace_closed_form(np.eye(2), 4, np.zeros((2, 2)), 1.0) == 1.0
    assert wishart_laplace_closed_form([[1.0]], 3, [[1.0]], 1.0) == pytest.approx(2 ** -1.5)
    with pytest.raises(EigenvalueViolation):
        wishart_laplace_closed_form([[1.0]], 3, [[-2.0]], 1.0)


def test_laplace_zero_c_is_one():
    chk = wishart_laplace_check(np.eye(2), 4, np.zeros((2, 2)), 0.7, RngStream(0), n_samples=1000)
    assert chk.mc_estimate == 1.0 and chk.closed_form == 1.0


def test_laplace_monte_carlo_agrees():
    chk = wishart_laplace_check(np.array([[1.0, 0.3], [0.3, 0.5]]), 5, np.eye(2), 0.6, RngStream(1),
                                n_samples=200_000)
    assert abs(chk.mc_estimate - chk.closed_form) <= 4 * chk.std_error


def test_streams_are_thread_count_invariant():
    def draw(size, gen):
        return gen.normal(size=size)

    stream = RngStream(123)
    one = np.concatenate(map_chunks(draw, 130_000, stream, threads=1))
    four = np.concatenate(map_chunks(draw, 130_000, stream, threads=4))
    np.testing.assert_array_equal(one, four)
    set_threads(3)
    try:
        np.testing.assert_array_equal(one, np.concatenate(map_chunks(draw, 130_000, stream)))
    finally:
        set_threads(1)


def test_stream_validation():
    with pytest.raises(ValueError):
        RngStream(-1)
    with pytest.raises(ValueError):
        RngStream(2**64)
    assert RngStream(2**64 - 1).child(0) != RngStream(2**64 - 1).child(1)

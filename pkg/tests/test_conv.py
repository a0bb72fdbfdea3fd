import numpy as np
import pytest

from dlnk.conv import (
    ConvNetworkSpec,
    backward_tmap,
    conv_forward,
    kernel_conv,
    sample_conv_mixing,
    sample_prior_conv_mixture,
    sample_prior_conv_weightspace,
    spectrum_lemma_check,
    translation_average,
    translation_operator,
)
from dlnk.errors import ConfigError, DofTooSmall, ShapeMismatch
from dlnk.mcstats import compare_moments
from dlnk.rng import RngStream


def loop_forward(spec, weights, x):
    """Direct sums over channels, offsets and sites."""
    h = np.array(x, dtype=float)
    n0, k = spec.n0, spec.mask // 2
    for ell in range(spec.depth):
        w = weights[ell]
        c_in, c_out = spec.channels[ell], spec.channels[ell + 1]
        new = np.zeros((h.shape[0], c_out, n0))
        for p in range(h.shape[0]):
            for a in range(c_out):
                for i in range(n0):
                    acc = 0.0
                    for m in range(-k, k + 1):
                        for b in range(c_in):
                            acc += w[m + k, a, b] * h[p, b, (i + m) % n0]
                    new[p, a, i] = acc / np.sqrt(spec.mask * c_in)
        h = new
    w_out = weights[-1]
    return np.array([np.sum(w_out * h[p]) for p in range(h.shape[0])]) / np.sqrt(spec.channels[-1] * n0)


def test_spec_validation():
    with pytest.raises(ConfigError):
        ConvNetworkSpec(4, (2, 5), 2)          # even mask
    with pytest.raises(ConfigError):
        ConvNetworkSpec(2, (2, 5), 3)          # mask wider than the input
    with pytest.raises(ConfigError):
        ConvNetworkSpec(3, (2,), 1)            # no hidden layer
    with pytest.raises(DofTooSmall):
        ConvNetworkSpec(3, (2, 3), 1).check_mixture()


def test_forward_matches_loops():
    spec = ConvNetworkSpec(5, (2, 3, 4), 3)
    g = np.random.default_rng(0)
    weights = [g.normal(size=(3, 3, 2)), g.normal(size=(3, 4, 3)), g.normal(size=(4, 5))]
    x = g.normal(size=(2, 2, 5))
    np.testing.assert_allclose(conv_forward(spec, weights, x), loop_forward(spec, weights, x), atol=1e-12)


def test_forward_degenerate_and_zero():
    spec = ConvNetworkSpec(4, (1, 1), 1)
    x = np.arange(8.0).reshape(2, 1, 4)
    s = conv_forward(spec, [np.ones((1, 1, 1)), np.ones((1, 4))], x)
    np.testing.assert_allclose(s, x[:, 0].sum(axis=1) / 2.0)   # 1/sqrt(M C0) = 1, readout 1/sqrt(C N0) = 1/2
    assert np.all(conv_forward(spec, [np.ones((1, 1, 1)), np.ones((1, 4))], np.zeros((3, 1, 4))) == 0)
    with pytest.raises(ShapeMismatch):
        conv_forward(spec, [np.ones((1, 1, 2)), np.ones((1, 4))], x)


def test_translation_operator_and_average():
    g = np.random.default_rng(1)
    a = g.normal(size=(5, 5))
    q = a @ a.T
    t = translation_operator(1, 5)
    np.testing.assert_array_equal(t @ np.arange(5.0), np.roll(np.arange(5.0), -1))
    direct = sum(translation_operator(m, 5).T @ q @ translation_operator(m, 5) for m in (-1, 0, 1)) / 3
    np.testing.assert_allclose(translation_average(q, 3), direct, atol=1e-12)
    np.testing.assert_array_equal(translation_average(q, 1), q)
    np.testing.assert_allclose(translation_average(np.eye(5), 5), np.eye(5))


def test_backward_tmap_examples():
    spec = ConvNetworkSpec(4, (2, 6, 6, 6), 3)
    np.testing.assert_allclose(backward_tmap(spec, np.stack([np.eye(4)] * 3)), np.eye(4), atol=1e-14)
    one = ConvNetworkSpec(4, (2, 6), 3)
    q = sample_conv_mixing(one, RngStream(0))
    np.testing.assert_allclose(backward_tmap(one, q), translation_average(q[0], 3), atol=1e-14)


def test_backward_tmap_two_layers_by_hand():
    spec = ConvNetworkSpec(3, (1, 5, 5), 3)
    qs = sample_conv_mixing(spec, RngStream(1))
    q2 = translation_average(qs[1], 3)
    low = np.linalg.cholesky(q2)
    expected = translation_average(low @ qs[0] @ low.T, 3)
    np.testing.assert_allclose(backward_tmap(spec, qs), expected, atol=1e-12)


def test_kernel_conv_loops_and_factor():
    spec = ConvNetworkSpec(3, (2, 5), 3, precisions=(1.0, 2.0))
    g = np.random.default_rng(2)
    x = g.normal(size=(4, 2, 3))
    a = g.normal(size=(3, 3))
    tq = a @ a.T
    k = kernel_conv(spec, x, tq)
    ref = np.zeros((4, 4))
    for mu in range(4):
        for nu in range(4):
            for a0 in range(2):
                for r in range(3):
                    for s in range(3):
                        ref[mu, nu] += tq[r, s] * x[mu, a0, r] * x[nu, a0, s]
    np.testing.assert_allclose(k, ref / (2.0 * 2 * 3), atol=1e-12)
    # tq = identity: plain inner products over channels and sites, divided by lambda* C_0 N_0
    ident = kernel_conv(spec, x, np.eye(3))
    np.testing.assert_allclose(ident, np.einsum("pai,qai->pq", x, x) / (2.0 * 2 * 3), atol=1e-12)


def test_mixture_matches_weightspace():
    spec = ConvNetworkSpec(3, (2, 5, 6), 3)
    x = np.random.default_rng(3).normal(size=(3, 2, 3))
    a = sample_prior_conv_mixture(spec, x, 100_000, RngStream(4))
    b = sample_prior_conv_weightspace(spec, x, 100_000, RngStream(5))
    cmp = compare_moments(a, b, fourth=[(0, 0), (0, 2)])
    assert cmp.passed(4.0), cmp.max_abs_z


def test_large_channels_covariance_is_identity_kernel():
    spec = ConvNetworkSpec(3, (2, 2000), 3)
    x = np.random.default_rng(6).normal(size=(2, 2, 3))
    s = sample_prior_conv_mixture(spec, x, 100_000, RngStream(7))
    emp = s.T @ s / s.shape[0]
    np.testing.assert_allclose(emp, kernel_conv(spec, x, np.eye(3)), atol=0.03 * np.abs(emp).max())


def test_prior_translation_equivariance():
    spec = ConvNetworkSpec(5, (1, 6), 3)
    x = np.random.default_rng(8).normal(size=(2, 1, 5))
    a = sample_prior_conv_weightspace(spec, x, 100_000, RngStream(9))
    b = sample_prior_conv_weightspace(spec, np.roll(x, 2, axis=-1), 100_000, RngStream(10))
    assert compare_moments(a, b).passed(4.0)


def test_zero_input_draws():
    spec = ConvNetworkSpec(3, (1, 5), 1)
    assert np.all(sample_prior_conv_mixture(spec, np.zeros((2, 1, 3)), 100, 0) == 0)
    assert np.all(sample_prior_conv_weightspace(spec, np.zeros((2, 1, 3)), 100, 0) == 0)


def test_spectrum_lemma_examples():
    g = np.random.default_rng(11)
    n0, p = 3, 2
    b = g.normal(size=(n0 * p, n0 * p))
    k = (b @ b.T).reshape(n0, p, n0, p).transpose(0, 2, 1, 3)
    lhs, rhs = spectrum_lemma_check(k, np.zeros(p))
    assert lhs == pytest.approx(1.0) and rhs == pytest.approx(1.0)
    s = g.normal(size=p)
    eye = np.eye(n0 * p).reshape(n0, p, n0, p).transpose(0, 2, 1, 3)
    lhs, rhs = spectrum_lemma_check(eye, s)
    target = (1 + s @ s) ** n0
    assert lhs == pytest.approx(target, rel=1e-12) and rhs == pytest.approx(target, rel=1e-12)
    lhs, rhs = spectrum_lemma_check(k, s)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_kernel_conv_positive_semidefinite():
    g = np.random.default_rng(12)
    for _ in range(20):
        spec = ConvNetworkSpec(3, (2, 4), 3)
        a = g.normal(size=(3, 3))
        k = kernel_conv(spec, g.normal(size=(7, 2, 3)), a @ a.T)   # P > C_0 N_0: rank deficient
        assert np.linalg.eigvalsh(k).min() >= -1e-10

import numpy as np
import pytest

from dlnk.errors import ConfigError, DofTooSmall, ShapeMismatch
from dlnk.fc import (
    FcNetworkSpec,
    fc_forward,
    kernel_fc,
    mixing_from_qs,
    sample_mixing,
    sample_prior_mixture,
    sample_prior_weightspace,
    vec_outputs,
)
from dlnk.mcstats import compare_moments
from dlnk.rng import RngStream


def test_spec_validation():
    with pytest.raises(ConfigError):
        FcNetworkSpec(3, (), 1)
    with pytest.raises(ConfigError):
        FcNetworkSpec(3, (4,), 1, precisions=(1.0,))
    with pytest.raises(ConfigError):
        FcNetworkSpec(3, (4,), 1, precisions=(1.0, -1.0))
    spec = FcNetworkSpec(3, (4, 5), 2, precisions=(2.0, 0.5, 3.0))
    assert spec.lambda_star == pytest.approx(3.0)
    assert spec.layer_sizes == (3, 4, 5, 2)


def test_forward_identity_weights():
    spec = FcNetworkSpec(3, (3,), 2)
    x = np.arange(6.0).reshape(3, 2)
    w0 = np.eye(3)
    w1 = np.eye(3)[:2]
    s = fc_forward(spec, [w0, w1], x)
    np.testing.assert_allclose(s, x[:2] / 3.0)   # 1/sqrt(N0) * 1/sqrt(N1), N0 = N1 = 3


def test_forward_shapes_and_zero_input():
    spec = FcNetworkSpec(2, (4,), 1)
    w = [np.ones((4, 2)), np.ones((1, 4))]
    np.testing.assert_array_equal(fc_forward(spec, w, np.zeros((2, 3))), np.zeros((1, 3)))
    with pytest.raises(ShapeMismatch):
        fc_forward(spec, [np.ones((4, 3)), np.ones((1, 4))], np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        fc_forward(spec, w[:1], np.zeros((2, 3)))


def test_weightspace_zero_input():
    spec = FcNetworkSpec(2, (4,), 1)
    s = sample_prior_weightspace(spec, np.zeros((2, 3)), 100, RngStream(0))
    assert np.all(s == 0)


def test_weightspace_scalar_variance():
    spec = FcNetworkSpec(3, (5,), 1)
    x = np.array([[1.0], [0.0], [0.0]])
    s = sample_prior_weightspace(spec, x, 100_000, RngStream(1))[:, 0, 0]
    se = np.std(s**2, ddof=1) / np.sqrt(s.size)
    assert abs(np.mean(s**2) - 1 / 3) <= 4 * se


def test_weightspace_covariance_is_nngp_kernel():
    spec = FcNetworkSpec(3, (6, 5), 2, precisions=(1.0, 2.0, 0.5))
    g = np.random.default_rng(0)
    x = g.normal(size=(3, 2))
    v = vec_outputs(sample_prior_weightspace(spec, x, 100_000, RngStream(2)))
    target = kernel_fc(spec, x, np.eye(2))
    prods = v[:, :, None] * v[:, None, :]
    se = prods.std(axis=0, ddof=1) / np.sqrt(v.shape[0])
    assert np.all(np.abs(prods.mean(axis=0) - target) <= 4 * se)


def test_kernel_examples():
    spec = FcNetworkSpec(2, (4,), 2)
    g = np.random.default_rng(1)
    x = g.normal(size=(2, 3))
    np.testing.assert_allclose(kernel_fc(spec, x, np.eye(2)), np.kron(x.T @ x / 2, np.eye(2)))
    q = np.array([[2.0, 0.5], [0.5, 1.0]])
    k = kernel_fc(spec, np.eye(2)[:, :2], q)
    np.testing.assert_allclose(k, np.kron(np.eye(2), q / 2))
    s1 = FcNetworkSpec(3, (4,), 1)
    x1 = np.array([[1.0], [2.0], [2.0]])
    assert kernel_fc(s1, x1, np.array([[1.7]]))[0, 0] == pytest.approx(9 * 1.7 / 3)


def test_kernel_index_layout():
    # vec index mu * D + d: entry (mu, d), (nu, e) is G_{mu nu} Q_{de}
    spec = FcNetworkSpec(2, (5,), 2)
    x = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 2.0]])
    q = np.array([[1.0, 0.3], [0.3, 2.0]])
    k = kernel_fc(spec, x, q)
    gram = x.T @ x / 2
    for mu in range(3):
        for nu in range(3):
            for d in range(2):
                for e in range(2):
                    assert k[mu * 2 + d, nu * 2 + e] == pytest.approx(gram[mu, nu] * q[d, e])


def test_mixing_draws():
    spec = FcNetworkSpec(3, (6, 7), 2)
    mix = sample_mixing(spec, RngStream(0), size=10)
    assert mix.qs.shape == (10, 2, 2, 2) and mix.q_top.shape == (10, 2, 2)
    rebuilt = mixing_from_qs(mix.qs)
    np.testing.assert_allclose(rebuilt.q_top, mix.q_top, atol=1e-12)
    single = sample_mixing(spec, RngStream(0))
    assert single.qs.shape == (2, 2, 2)


def test_mixing_concentrates_at_large_width():
    spec = FcNetworkSpec(3, (10**6,), 2)
    mix = sample_mixing(spec, RngStream(3))
    assert np.linalg.norm(mix.qs[0] - np.eye(2)) < 1e-2


def test_mixture_needs_width_above_output_dim():
    spec = FcNetworkSpec(3, (2, 5), 2)
    with pytest.raises(DofTooSmall):
        sample_prior_mixture(spec, np.ones((3, 1)), 10, 0)


def test_mixture_matches_weightspace_desk_instance():
    spec = FcNetworkSpec(3, (8, 8), 2)
    x = np.random.default_rng(5).normal(size=(3, 4))
    a = vec_outputs(sample_prior_mixture(spec, x, 100_000, RngStream(10)))
    b = vec_outputs(sample_prior_weightspace(spec, x, 100_000, RngStream(11)))
    cmp = compare_moments(a, b, fourth=[(0, 0), (1, 3)])
    assert cmp.passed(4.0), cmp.max_abs_z


def test_fourth_moment_is_not_gaussian():
    # the mixture excess kurtosis is visible and matched by the weight-space sampler
    spec = FcNetworkSpec(1, (5,), 1)
    x = np.ones((1, 1))
    a = sample_prior_mixture(spec, x, 200_000, RngStream(20))[:, 0, 0]
    b = sample_prior_weightspace(spec, x, 200_000, RngStream(21))[:, 0, 0]
    fa, fb = a**4, b**4
    z = (fa.mean() - fb.mean()) / np.hypot(fa.std() / np.sqrt(fa.size), fb.std() / np.sqrt(fb.size))
    assert abs(z) <= 5
    # E[S^4] = 3 E[Q^2] = 3 (1 + 2/N) for a single hidden layer
    assert fa.mean() == pytest.approx(3 * (1 + 2 / 5), rel=0.03)


def test_mixture_zero_input():
    spec = FcNetworkSpec(2, (4,), 1)
    assert np.all(sample_prior_mixture(spec, np.zeros((2, 2)), 50, 0) == 0)

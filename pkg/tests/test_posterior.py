import math

import numpy as np
import pytest

from dlnk.conv import ConvNetworkSpec
from dlnk.errors import ChainNotMixed, DegenerateWeights, RankDeficientDesign, ShapeMismatch
from dlnk.fc import FcNetworkSpec, mixing_from_qs, sample_mixing
from dlnk.oracles import weightspace_posterior
from dlnk.posterior import (
    SigmaBlocks,
    check_design,
    joint_posterior_moments,
    meanfield_log_weights,
    meanfield_mixing,
    phi_beta,
    phi_parts,
    posterior_mixing_is,
    posterior_mixing_mh,
    predictive_mixture,
    predictive_moments,
    sigma_blocks_conv,
    sigma_blocks_fc,
)
from dlnk.rng import RngStream


@pytest.fixture
def fc_instance():
    g = np.random.default_rng(0)
    spec = FcNetworkSpec(4, (6, 7), 2)
    x = g.normal(size=(4, 3))
    y = g.normal(size=6)
    x0 = g.normal(size=(4, 1))
    return spec, x0, x, y


def test_phi_examples():
    assert phi_beta([[1.0]], [2.0], 1.0) == pytest.approx(2 + math.log(2))
    assert phi_beta(np.zeros((3, 3)), np.zeros(3), 2.0) == pytest.approx(0.0, abs=1e-12)
    g = np.random.default_rng(1)
    a = g.normal(size=(3, 3))
    s, y, beta = a @ a.T, g.normal(size=3), 1e-6
    assert phi_beta(s, y, beta) == pytest.approx(beta * (y @ y + np.trace(s)), rel=1e-4)


def test_phi_matches_direct_formula():
    g = np.random.default_rng(2)
    a = g.normal(size=(4, 4))
    s, y, beta = a @ a.T, g.normal(size=4), 3.0
    quad, logdet = phi_parts(s, y, beta)
    assert quad == pytest.approx(y @ np.linalg.solve(s + np.eye(4) / beta, y), rel=1e-12)
    assert logdet == pytest.approx(np.linalg.slogdet(np.eye(4) + beta * s)[1], rel=1e-12)
    batch = np.stack([s, 2 * s])
    np.testing.assert_allclose(phi_beta(batch, y, beta), [phi_beta(s, y, beta), phi_beta(2 * s, y, beta)])


def test_predictive_moments_match_gaussian_conditioning(fc_instance):
    spec, x0, x, y = fc_instance
    mix = sample_mixing(spec, RngStream(3))
    blocks = sigma_blocks_fc(spec, x0, x, mix)
    beta = 2.5
    pm = predictive_moments(blocks, y, beta)
    inv = np.linalg.inv(blocks.s11 + np.eye(6) / beta)
    np.testing.assert_allclose(pm.mean, blocks.s01 @ inv @ y, atol=1e-12)
    np.testing.assert_allclose(pm.cov, blocks.s00 - blocks.s01 @ inv @ blocks.s01.T, atol=1e-12)
    np.testing.assert_allclose(predictive_moments(blocks, np.zeros(6), beta).mean, 0.0)


def test_sigma_blocks_examples(fc_instance):
    spec, _, x, _ = fc_instance
    ident = mixing_from_qs(np.stack([np.eye(2)] * 2))
    b = sigma_blocks_fc(spec, x[:, :1], x, ident)
    np.testing.assert_allclose(b.s01[:, :2], b.s00)
    z = sigma_blocks_fc(spec, np.zeros((4, 1)), x, ident)
    assert np.all(z.s00 == 0) and np.all(z.s01 == 0)
    np.testing.assert_allclose(b.full()[2:, 2:], b.s11)


def test_interpolation_at_training_point():
    spec = FcNetworkSpec(2, (5,), 1)
    x = np.array([[1.0], [0.5]])
    blocks = sigma_blocks_fc(spec, x, x, np.eye(1))
    pm = predictive_moments(blocks, [0.7], 1e10)
    assert pm.mean[0] == pytest.approx(0.7, abs=1e-8)
    assert abs(pm.cov[0, 0]) < 1e-8


def test_joint_moments(fc_instance):
    spec, x0, x, y = fc_instance
    mix = sample_mixing(spec, RngStream(4))
    jm = joint_posterior_moments(spec, x0, x, y, 1.5, mix)
    np.testing.assert_allclose(jm.cov @ jm.precision, np.eye(8), atol=1e-8)
    pm = predictive_moments(sigma_blocks_fc(spec, x0, x, mix), y, 1.5)
    np.testing.assert_allclose(jm.mean[:2], pm.mean, atol=1e-12)
    np.testing.assert_allclose(jm.cov[:2, :2], pm.cov, atol=1e-12)
    weak = joint_posterior_moments(spec, x0, x, y, 1e-12, mix)
    full = sigma_blocks_fc(spec, x0, x, mix).full()
    np.testing.assert_allclose(weak.mean, 0.0, atol=1e-9)
    np.testing.assert_allclose(weak.cov, full, atol=1e-9)


def test_design_rank_check():
    spec = FcNetworkSpec(2, (5,), 1)
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(RankDeficientDesign) as info:
        check_design(spec, np.array([[1.0], [1.0]]), x)
    assert info.value.smallest_eigenvalue is not None and info.value.smallest_eigenvalue < 1e-10
    spec3 = FcNetworkSpec(3, (5,), 1)
    assert check_design(spec3, np.array([[0.0], [0.0], [1.0]]), np.eye(3)[:, :2]) > 0
    with pytest.raises(ShapeMismatch):
        check_design(spec3, np.ones((3, 2)), np.eye(3)[:, :2])


def test_is_weak_data_recovers_prior():
    spec = FcNetworkSpec(3, (6,), 2)
    g = np.random.default_rng(5)
    mix = posterior_mixing_is(spec, g.normal(size=(3, 2)), g.normal(size=4), 1e-10, 50_000, RngStream(6))
    assert mix.ess == pytest.approx(50_000, rel=1e-6)
    mean, se = mix.weighted_mean(mix.qs[:, 0])
    assert np.all(np.abs(mean - np.eye(2)) <= 4 * se + 1e-12)


def test_is_zero_labels_shrink_q():
    spec = FcNetworkSpec(3, (8,), 1)
    x = np.random.default_rng(7).normal(size=(3, 3))
    mix = posterior_mixing_is(spec, x, np.zeros(3), 5.0, 100_000, RngStream(8))
    mean, se = mix.weighted_mean(mix.core[:, 0, 0])
    assert mean < 1 - 4 * se


def test_is_degenerate_weights():
    spec = FcNetworkSpec(3, (6,), 1)
    x = np.random.default_rng(9).normal(size=(3, 3))
    with pytest.raises(DegenerateWeights) as info:
        posterior_mixing_is(spec, x, 50 * np.ones(3), 1e4, 200, RngStream(0))
    assert info.value.ess < 10


def test_mh_weak_data_recovers_prior():
    spec = FcNetworkSpec(3, (6, 7), 2)
    g = np.random.default_rng(10)
    mix = posterior_mixing_mh(spec, g.normal(size=(3, 2)), g.normal(size=4), 1e-10, 4000,
                              rng=RngStream(11), n_chains=16)
    assert 0.1 <= mix.acceptance <= 0.7
    mean, se = mix.weighted_mean(mix.qs[:, :, 0, 0])
    assert np.all(np.abs(mean - 1.0) <= 4 * se)


def test_mh_and_is_agree_on_phi():
    spec = FcNetworkSpec(3, (8,), 1)
    g = np.random.default_rng(12)
    x, y = g.normal(size=(3, 3)), g.normal(size=3)
    a = posterior_mixing_is(spec, x, y, 3.0, 200_000, RngStream(13))
    b = posterior_mixing_mh(spec, x, y, 3.0, 5000, rng=RngStream(14), n_chains=32)
    ma, sa = a.weighted_mean(a.phi)
    mb, sb = b.weighted_mean(b.phi)
    assert abs(ma - mb) <= 4 * math.hypot(sa, sb)


def test_mh_warns_on_poor_acceptance():
    spec = FcNetworkSpec(3, (8,), 1)
    x = np.random.default_rng(15).normal(size=(3, 2))
    with pytest.warns(ChainNotMixed):
        posterior_mixing_mh(spec, x, np.ones(2), 1.0, 300, step_size=20.0, rng=RngStream(16), n_chains=4)


def test_meanfield_unit_scale_equals_is_weights():
    quad, logdet = np.array([1.0, 2.0, 0.5]), np.array([0.3, 0.1, 0.9])
    np.testing.assert_allclose(meanfield_log_weights(quad, logdet, 1.0), -0.5 * (quad + logdet))


def test_meanfield_weak_data_recovers_prior():
    spec = FcNetworkSpec(3, (6,), 1)
    x = np.random.default_rng(17).normal(size=(3, 2))
    mix = meanfield_mixing(spec, x, np.ones(2), 1e-10, 50_000, RngStream(18))
    mean, se = mix.weighted_mean(mix.qs[:, 0, 0, 0])
    assert abs(mean - 1.0) <= 4 * se


def test_predictive_weak_data_goes_to_zero(fc_instance):
    spec, x0, x, y = fc_instance
    pred = predictive_mixture(spec, x0, x, y, 1e-8, "is", 20_000, RngStream(19))
    np.testing.assert_allclose(pred.mean, 0.0, atol=1e-6)


def test_predictive_fc_matches_weightspace(fc_instance):
    spec, x0, x, y = fc_instance
    pred = predictive_mixture(spec, x0, x, y, 2.0, "is", 100_000, RngStream(20))
    ref = weightspace_posterior(spec, x0, x, y, 2.0, 400_000, RngStream(21))
    z = (pred.mean - ref.mean) / np.hypot(pred.mean_se, ref.mean_se)
    zc = (pred.cov - ref.cov) / np.hypot(pred.cov_se, ref.cov_se)
    assert np.all(np.abs(z) <= 4) and np.all(np.abs(zc) <= 4)


def test_predictive_mh_matches_is(fc_instance):
    spec, x0, x, y = fc_instance
    a = predictive_mixture(spec, x0, x, y, 2.0, "is", 100_000, RngStream(22))
    b = predictive_mixture(spec, x0, x, y, 2.0, "mh", 3000, RngStream(23), n_chains=32)
    z = (a.mean - b.mean) / np.hypot(a.mean_se, b.mean_se)
    assert np.all(np.abs(z) <= 4)


def test_predictive_conv_matches_weightspace():
    spec = ConvNetworkSpec(3, (1, 5), 3)
    g = np.random.default_rng(24)
    x = g.normal(size=(2, 1, 3))
    y = g.normal(size=2)
    x0 = g.normal(size=(1, 1, 3))
    pred = predictive_mixture(spec, x0, x, y, 3.0, "is", 100_000, RngStream(25))
    ref = weightspace_posterior(spec, x0, x, y, 3.0, 400_000, RngStream(26))
    assert abs(pred.mean[0] - ref.mean[0]) <= 4 * math.hypot(pred.mean_se[0], ref.mean_se[0])
    assert abs(pred.cov[0, 0] - ref.cov[0, 0]) <= 4 * math.hypot(pred.cov_se[0, 0], ref.cov_se[0, 0])
    blocks = sigma_blocks_conv(spec, x0, x, np.eye(3))
    assert isinstance(blocks, SigmaBlocks) and blocks.s11.shape == (2, 2)

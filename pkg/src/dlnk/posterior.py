"""Gaussian-likelihood posterior over the Wishart mixing variables.

Given a mixing draw the network outputs are jointly Gaussian, so the
posterior predictive is a mixture of Gaussians whose mixing measure is the
prior over (Q_1, ..., Q_L) tilted by exp(-Phi_beta / 2). Two samplers are
provided for that measure: importance sampling from the prior and a
random-walk Metropolis chain in log-Cholesky coordinates.

Both architectures share the code path. The "core" matrix of a mixing draw
is Q^(L) for fully-connected networks and T(Q_1, ..., Q_L) for
convolutional ones; the training kernel is built from it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .conv import ConvNetworkSpec, backward_tmap, kernel_conv
from .errors import ChainNotMixed, ConfigError, DegenerateWeights, RankDeficientDesign, ShapeMismatch
from .fc import FcNetworkSpec, MixingSample, _wishart_layers, input_gram, q_top_from_chol
from .mcstats import autocorr_ess, importance_ess, log_mean_exp, normalized_weights
from .rng import as_generator, map_chunks
from .spd import cholesky, kron

DESIGN_RTOL = 1e-10
MIN_IS_ESS = 10.0


# --------------------------------------------------------------------------
# architecture plumbing


def _is_conv(spec) -> bool:
    return isinstance(spec, ConvNetworkSpec)


def mixing_dim(spec) -> int:
    return spec.n0 if _is_conv(spec) else spec.d


def output_dim(spec) -> int:
    return 1 if _is_conv(spec) else spec.d


def hidden_sizes(spec) -> tuple[int, ...]:
    return spec.hidden if _is_conv(spec) else spec.widths


def _check_spec(spec):
    if not isinstance(spec, (FcNetworkSpec, ConvNetworkSpec)):
        raise ConfigError(f"unsupported network spec {type(spec).__name__}")
    spec.check_mixture()


def _as_x(spec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if _is_conv(spec):
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (spec.c0, spec.n0):
            raise ShapeMismatch(f"x must be (P, {spec.c0}, {spec.n0}), got {x.shape}")
    else:
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] != spec.n0:
            raise ShapeMismatch(f"x must be {spec.n0} x P, got {x.shape}")
    return x


def _n_examples(spec, x) -> int:
    return x.shape[0] if _is_conv(spec) else x.shape[1]


def _enlarge(spec, x0, x) -> np.ndarray:
    x0 = _as_x(spec, x0)
    if _n_examples(spec, x0) != 1:
        raise ShapeMismatch("x0 must hold a single test input")
    x = _as_x(spec, x)
    return np.concatenate([x0, x], axis=0 if _is_conv(spec) else 1)


def _as_y(spec, x, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    want = _n_examples(spec, x) * output_dim(spec)
    if y.size != want:
        raise ShapeMismatch(f"y must have D*P = {want} entries, got {y.size}")
    return y


def core_from_qs(spec, qs) -> np.ndarray:
    """Q^(L) (fully connected) or T(Q_1..Q_L) (convolutional) for stacked draws."""
    qs = np.asarray(qs, dtype=float)
    if _is_conv(spec):
        return backward_tmap(spec, qs)
    return q_top_from_chol(cholesky(qs))


def training_kernel(spec, x, core) -> np.ndarray:
    """Prior covariance of the stacked outputs at inputs ``x`` given ``core``."""
    x = _as_x(spec, x)
    if _is_conv(spec):
        return kernel_conv(spec, x, core)
    return kron(input_gram(spec, x), core)


def design_gram(spec, x) -> np.ndarray:
    """X^T X (fully connected) or sum_a0 X_a0 X_a0^T (convolutional), P x P."""
    x = _as_x(spec, x)
    if _is_conv(spec):
        return np.einsum("pai,qai->pq", x, x)
    return x.T @ x


def check_design(spec, x0, x) -> float:
    """Raise RankDeficientDesign unless the enlarged Gram is numerically PD.

    Returns the smallest eigenvalue of the enlarged Gram matrix.
    """
    g = design_gram(spec, _enlarge(spec, x0, x))
    eig = np.linalg.eigvalsh(g)
    lo, hi = float(eig[0]), float(eig[-1])
    if hi <= 0 or lo < DESIGN_RTOL * hi:
        raise RankDeficientDesign(
            f"enlarged design Gram is singular: smallest eigenvalue {lo:.3g}, largest {hi:.3g}",
            smallest_eigenvalue=lo,
        )
    return lo


# --------------------------------------------------------------------------
# per-draw Gaussian quantities


@dataclass
class SigmaBlocks:
    s00: np.ndarray
    s01: np.ndarray
    s11: np.ndarray

    def full(self) -> np.ndarray:
        top = np.concatenate([self.s00, self.s01], axis=-1)
        bottom = np.concatenate([np.swapaxes(self.s01, -1, -2), self.s11], axis=-1)
        return np.concatenate([top, bottom], axis=-2)


@dataclass
class PredictiveMoments:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray
    precision: np.ndarray


def _blocks(spec, x0, x, core) -> SigmaBlocks:
    k = training_kernel(spec, _enlarge(spec, x0, x), core)
    d = output_dim(spec)
    return SigmaBlocks(k[..., :d, :d], k[..., :d, d:], k[..., d:, d:])


def sigma_blocks_fc(spec: FcNetworkSpec, x0, x, mix) -> SigmaBlocks:
    """Sigma_00, Sigma_01, Sigma_11 from the enlarged design [x0, X]."""
    core = mix.q_top if isinstance(mix, MixingSample) else np.asarray(mix, dtype=float)
    return _blocks(spec, x0, x, core)


def sigma_blocks_conv(spec: ConvNetworkSpec, x0, x, tq) -> SigmaBlocks:
    return _blocks(spec, x0, x, np.asarray(tq, dtype=float))


def _regularised_chol(s11, beta):
    s11 = np.asarray(s11, dtype=float)
    n = s11.shape[-1]
    return cholesky(s11 + np.eye(n) / beta)


def _tri_solve(low, b):
    # numpy has no batched triangular solve; the general solver is exact enough
    return np.linalg.solve(low, b)


def phi_parts(s11, y, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """(y^T (S11 + I/beta)^-1 y, log det(I + beta S11)), batched over S11.

    One Cholesky of S11 + I/beta serves both terms:
    log det(I + beta S11) = n log beta + log det(S11 + I/beta).
    """
    if not beta > 0:
        raise ConfigError("beta must be > 0")
    s11 = np.asarray(s11, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = s11.shape[-1]
    if y.size != n:
        raise ShapeMismatch(f"y has {y.size} entries, Sigma_11 is {n} x {n}")
    if n == 0:
        zero = np.zeros(s11.shape[:-2])
        return zero, zero
    low = _regularised_chol(s11, beta)
    z = _tri_solve(low, np.broadcast_to(y[:, None], s11.shape[:-1] + (1,)))[..., 0]
    quad = np.sum(z**2, axis=-1)
    logdet = n * np.log(beta) + 2.0 * np.sum(np.log(np.diagonal(low, axis1=-2, axis2=-1)), axis=-1)
    return quad, logdet


def phi_beta(s11, y, beta: float):
    quad, logdet = phi_parts(s11, y, beta)
    out = quad + logdet
    return float(out) if np.ndim(out) == 0 else out


def predictive_moments(blocks: SigmaBlocks, y, beta: float) -> PredictiveMoments:
    """m0 = S01 (S11 + I/beta)^-1 y and the Schur complement covariance."""
    if not beta > 0:
        raise ConfigError("beta must be > 0")
    y = np.asarray(y, dtype=float).ravel()
    low = _regularised_chol(blocks.s11, beta)
    s10 = np.swapaxes(blocks.s01, -1, -2)
    w = _tri_solve(low, s10)
    z = _tri_solve(low, np.broadcast_to(y[:, None], blocks.s11.shape[:-1] + (1,)))
    mean = (np.swapaxes(w, -1, -2) @ z)[..., 0]
    cov = blocks.s00 - np.swapaxes(w, -1, -2) @ w
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    return PredictiveMoments(mean, cov)


def joint_posterior_moments(spec, x0, x, y, beta: float, mix) -> GaussianMoments:
    """Joint Gaussian law of (s_0, s_1, ..., s_P) given a mixing draw.

    The precision is beta*Pi_0 + Sigma^-1 with Pi_0 selecting the training
    block; the covariance is obtained by Woodbury so that Sigma^-1 is only
    needed for reporting the precision.
    """
    check_design(spec, x0, x)
    core = mix.q_top if isinstance(mix, MixingSample) else np.asarray(mix, dtype=float)
    xt = _enlarge(spec, x0, x)
    sigma = training_kernel(spec, xt, core)
    d = output_dim(spec)
    y = _as_y(spec, _as_x(spec, x), y)
    low = _regularised_chol(sigma[d:, d:], beta)
    w = _tri_solve(low, sigma[d:, :])
    cov = sigma - w.T @ w
    cov = 0.5 * (cov + cov.T)
    mean = w.T @ _tri_solve(low, y)
    pi0 = np.zeros_like(sigma)
    pi0[d:, d:] = np.eye(sigma.shape[0] - d)
    s_low = cholesky(sigma)
    sigma_inv = np.linalg.solve(s_low.T, np.linalg.solve(s_low, np.eye(sigma.shape[0])))
    return GaussianMoments(mean, cov, beta * pi0 + sigma_inv)


# --------------------------------------------------------------------------
# weighted mixtures over the mixing variables


@dataclass
class WeightedMixture:
    """Draws (Q_1..Q_L) with log-weights and sampler diagnostics.

    ``qs`` is (n, L, k, k) and ``core`` (n, k, k). For the Metropolis sampler
    weights are uniform and ``ess`` comes from chain autocorrelation.
    """

    qs: np.ndarray
    core: np.ndarray
    log_weights: np.ndarray
    phi: np.ndarray
    method: str
    ess: float
    log_normalizer: float = float("nan")
    log_normalizer_se: float = float("nan")
    acceptance: float = float("nan")
    n_chains: int = 0
    mean_scale: float = 1.0

    def __len__(self):
        return self.log_weights.size

    @property
    def weights(self) -> np.ndarray:
        return normalized_weights(self.log_weights)

    @property
    def variance_inflation(self) -> float:
        """n / ESS for correlated chains, 1 for independent draws."""
        if self.method == "mh":
            return max(len(self) / max(self.ess, 1.0), 1.0)
        return 1.0

    def weighted_mean(self, values) -> tuple[np.ndarray, np.ndarray]:
        v = np.asarray(values, dtype=float)
        w = self.weights.reshape((-1,) + (1,) * (v.ndim - 1))
        mean = np.sum(w * v, axis=0)
        se = np.sqrt(np.sum(w**2 * (v - mean) ** 2, axis=0) * self.variance_inflation)
        return mean, se


def _draw_prior(spec, size, gen):
    qs, _ = _wishart_layers(hidden_sizes(spec), mixing_dim(spec), size, gen)
    return qs


def _prior_pass(spec, x, y, beta, n_samples, rng, threads):
    """Prior draws with the two Phi terms, chunked for reproducibility."""

    def chunk(size, gen):
        qs = _draw_prior(spec, size, gen)
        core = core_from_qs(spec, qs)
        quad, logdet = phi_parts(training_kernel(spec, x, core), y, beta)
        return qs, core, quad, logdet

    parts = map_chunks(chunk, n_samples, rng, threads=threads)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _finish_weighted(qs, core, log_w, phi, method, min_ess, mean_scale=1.0) -> WeightedMixture:
    if not np.all(np.isfinite(log_w)):
        raise DegenerateWeights("non-finite importance log-weights")
    ess = importance_ess(log_w)
    lz, rel_se = log_mean_exp(log_w)
    if ess < min_ess:
        raise DegenerateWeights(f"importance ESS {ess:.3g} below {min_ess:g}", ess=ess)
    return WeightedMixture(
        qs, core, log_w, phi, method, ess, lz, rel_se, mean_scale=mean_scale
    )


def posterior_mixing_is(spec, x, y, beta: float, n_samples: int, rng, threads=None,
                        min_ess: float = MIN_IS_ESS) -> WeightedMixture:
    """Self-normalised importance sampling with the prior as proposal.

    log-weight = -Phi_beta / 2, so ``log_normalizer`` estimates the log
    evidence in the normalised-prior convention.
    """
    _check_spec(spec)
    x = _as_x(spec, x)
    y = _as_y(spec, x, y)
    qs, core, quad, logdet = _prior_pass(spec, x, y, beta, n_samples, rng, threads)
    phi = quad + logdet
    return _finish_weighted(qs, core, -0.5 * phi, phi, "is", min_ess)


def meanfield_log_weights(phi0, r, width_scale: float) -> np.ndarray:
    """-(N/2) Phi° - R/2 for the mean-field rescaled mixing measure."""
    return -0.5 * width_scale * np.asarray(phi0) - 0.5 * np.asarray(r)


def meanfield_mixing(spec, x, y, beta: float, n_samples: int, rng, threads=None,
                     min_ess: float = MIN_IS_ESS, sampler: str = "is", **mh_options) -> WeightedMixture:
    """The mean-field measure; needs equal hidden sizes.

    With ``sampler="is"`` the prior is the proposal, which degenerates as N
    grows; ``sampler="mh"`` runs the Metropolis chains on the same target
    (``n_samples`` is then the number of kept steps per chain).
    """
    _check_spec(spec)
    sizes = hidden_sizes(spec)
    if len(set(sizes)) != 1:
        raise ConfigError(f"mean-field rescaling needs equal hidden sizes, got {sizes}")
    n = float(sizes[0])
    if sampler == "mh":
        return _metropolis(spec, x, y, beta, n_samples, mh_options.get("step_size"), rng,
                           mh_options.get("n_chains", 16), mh_options.get("burn_in"),
                           mh_options.get("thin", 1), width_scale=n)
    if sampler != "is":
        raise ConfigError(f"unknown sampler {sampler!r}")
    x = _as_x(spec, x)
    y = _as_y(spec, x, y)
    qs, core, quad, logdet = _prior_pass(spec, x, y, beta, n_samples, rng, threads)
    log_w = meanfield_log_weights(quad, logdet, n)
    return _finish_weighted(qs, core, log_w, n * quad + logdet, "meanfield", min_ess,
                            mean_scale=np.sqrt(n))


# log-Cholesky coordinates: theta holds log-diagonal and raw strict-lower entries


def _theta_to_chol(theta):
    k = theta.shape[-1]
    idx = np.arange(k)
    low = np.tril(theta, -1)
    low[..., idx, idx] = np.exp(theta[..., idx, idx])
    return low


def _log_prior_theta(theta, sizes):
    """Wishart(I/N, N) log density in log-Cholesky coordinates, up to a constant.

    Includes the Jacobian: dQ = 2^k prod_i L_ii^(k-i+1) dL and dL_ii = L_ii dtheta_ii,
    so the density is prod_i L_ii^(N-i+1) exp(-N/2 sum L_ij^2).
    """
    k = theta.shape[-1]
    idx = np.arange(k)
    diag = theta[..., idx, idx]
    ns = np.asarray(sizes, dtype=float)[:, None]
    powers = ns - idx[None, :]  # N - i + 1 with i 1-based
    low = _theta_to_chol(theta)
    sq = np.sum(low**2, axis=(-2, -1))
    return np.sum(powers * diag, axis=(-2, -1)) - 0.5 * np.sum(ns[:, 0] * sq, axis=-1)


def _core_from_chol(spec, low):
    if _is_conv(spec):
        return backward_tmap(spec, low @ np.swapaxes(low, -1, -2))
    return q_top_from_chol(low)


def default_step_size(spec) -> float:
    k = mixing_dim(spec)
    n_params = len(hidden_sizes(spec)) * k * (k + 1) // 2
    return 2.38 / np.sqrt(2.0 * min(hidden_sizes(spec)) * n_params)


def posterior_mixing_mh(spec, x, y, beta: float, n_steps: int, step_size: float | None = None,
                        rng=0, n_chains: int = 16, burn_in: int | None = None,
                        thin: int = 1) -> WeightedMixture:
    """Random-walk Metropolis on (Q_1..Q_L), all chains advanced together.

    Every chain starts at the identities and runs ``burn_in`` discarded
    steps followed by ``n_steps`` kept steps (every ``thin``-th one stored).
    """
    return _metropolis(spec, x, y, beta, n_steps, step_size, rng, n_chains, burn_in, thin)


def _metropolis(spec, x, y, beta, n_steps, step_size, rng, n_chains, burn_in, thin,
                width_scale: float | None = None) -> WeightedMixture:
    """Shared chain code; ``width_scale`` N switches to the mean-field target."""
    _check_spec(spec)
    x = _as_x(spec, x)
    y = _as_y(spec, x, y)
    if n_steps < 1 or n_chains < 1 or thin < 1:
        raise ConfigError("n_steps, n_chains and thin must be >= 1")
    step = default_step_size(spec) if step_size is None else float(step_size)
    if not step > 0:
        raise ConfigError("step_size must be > 0")
    burn = max(n_steps // 5, 200) if burn_in is None else int(burn_in)
    gen = as_generator(rng)
    sizes = hidden_sizes(spec)
    k = mixing_dim(spec)
    n_layers = len(sizes)
    tri = np.tril(np.ones((k, k)))

    def log_target(theta):
        low = _theta_to_chol(theta)
        core = _core_from_chol(spec, low)
        quad, logdet = phi_parts(training_kernel(spec, x, core), y, beta)
        phi = quad + logdet if width_scale is None else width_scale * quad + logdet
        return _log_prior_theta(theta, sizes) - 0.5 * phi, phi, low, core

    theta = np.zeros((n_chains, n_layers, k, k))
    lp, phi, low, core = log_target(theta)
    kept = n_steps // thin
    qs_out = np.empty((kept, n_chains, n_layers, k, k))
    core_out = np.empty((kept, n_chains, k, k))
    phi_out = np.empty((kept, n_chains))
    accepted = 0
    for t in range(burn + n_steps):
        prop = theta + step * gen.standard_normal(theta.shape) * tri
        lp_new, phi_new, low_new, core_new = log_target(prop)
        accept = np.log(gen.random(n_chains)) < lp_new - lp
        theta = np.where(accept[:, None, None, None], prop, theta)
        lp = np.where(accept, lp_new, lp)
        phi = np.where(accept, phi_new, phi)
        low = np.where(accept[:, None, None, None], low_new, low)
        core = np.where(accept[:, None, None], core_new, core)
        if t >= burn:
            accepted += int(accept.sum())
            j = t - burn
            if j % thin == 0 and j // thin < kept:
                qs_out[j // thin] = low @ np.swapaxes(low, -1, -2)
                core_out[j // thin] = core
                phi_out[j // thin] = phi
    rate = accepted / (n_chains * n_steps)
    if not 0.1 <= rate <= 0.7:
        warnings.warn(f"Metropolis acceptance {rate:.3f} outside [0.1, 0.7]; adjust step_size",
                      ChainNotMixed, stacklevel=2)
    traces = [phi_out.T]
    traces += [np.trace(core_out, axis1=-2, axis2=-1).T]
    ess = min(autocorr_ess(tr) for tr in traces)
    qs_flat = np.swapaxes(qs_out, 0, 1).reshape(-1, n_layers, k, k)
    core_flat = np.swapaxes(core_out, 0, 1).reshape(-1, k, k)
    phi_flat = phi_out.T.reshape(-1)
    return WeightedMixture(qs_flat, core_flat, np.zeros(phi_flat.size), phi_flat, "mh", ess,
                           acceptance=rate, n_chains=n_chains,
                           mean_scale=1.0 if width_scale is None else float(np.sqrt(width_scale)))


# --------------------------------------------------------------------------
# predictive mixtures


@dataclass
class PredictiveMixture:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    mixture: WeightedMixture


def mixture_moments(mixture: WeightedMixture, means, covs):
    """Law of total variance over the mixing draws, with delta-method s.e."""
    w = mixture.weights
    m = np.asarray(means, dtype=float) * mixture.mean_scale
    c = np.asarray(covs, dtype=float)
    mean = np.einsum("n,nd->d", w, m)
    second = np.einsum("n,nij->ij", w, c + m[:, :, None] * m[:, None, :])
    cov = second - np.outer(mean, mean)
    dm = m - mean
    infl = (c + m[:, :, None] * m[:, None, :] - second) - dm[:, :, None] * mean[None, None, :] \
        - mean[None, :, None] * dm[:, None, :]
    inflate = mixture.variance_inflation
    mean_se = np.sqrt(np.einsum("n,nd->d", w**2, dm**2) * inflate)
    cov_se = np.sqrt(np.einsum("n,nij->ij", w**2, infl**2) * inflate)
    return mean, cov, mean_se, cov_se


def predictive_mixture(spec, x0, x, y, beta: float, sampler: str = "is", n: int = 100_000,
                       rng=0, check_design_rank: bool = True, threads=None,
                       **sampler_options) -> PredictiveMixture:
    """Mixture mean and covariance of the output at ``x0``.

    ``sampler`` is "is" (importance sampling), "mh" (Metropolis; ``n`` is
    the number of kept steps per chain) or "meanfield".
    """
    _check_spec(spec)
    if check_design_rank:
        check_design(spec, x0, x)
    x = _as_x(spec, x)
    y = _as_y(spec, x, y)
    if sampler == "is":
        mixture = posterior_mixing_is(spec, x, y, beta, n, rng, threads=threads, **sampler_options)
    elif sampler == "mh":
        mixture = posterior_mixing_mh(spec, x, y, beta, n, rng=rng, **sampler_options)
    elif sampler == "meanfield":
        mixture = meanfield_mixing(spec, x, y, beta, n, rng, threads=threads, **sampler_options)
    else:
        raise ConfigError(f"unknown sampler {sampler!r}")
    blocks = _blocks(spec, x0, x, mixture.core)
    pm = predictive_moments(blocks, y, beta)
    mean, cov, mean_se, cov_se = mixture_moments(mixture, pm.mean, pm.cov)
    return PredictiveMixture(mean, cov, mean_se, cov_se, mixture)

"""Model evidence for scalar-output (D = 1) fully-connected networks.

With D = 1 every mixing variable is a scalar Q_l ~ Gamma(N_l/2, rate N_l/2)
and Sigma_11 = q * S with q = prod_l Q_l and S = X^T X / (N_0 lambda*).
Diagonalising S = V diag(e) V^T and writing z = V^T y gives

    Phi_beta(q) = sum_i z_i^2 / (q e_i + 1/beta) + sum_i log(1 + beta q e_i),

so the evidence Z_beta = E[exp(-Phi_beta(q)/2)] is an integral over the
prior of the Q's, normalised so that Z = 1 without data.

Internally the gamma variables are handled through g_l = N_l Q_l / 2 ~
Gamma(N_l/2, 1) and t_l = log g_l, whose log density a t - e^t - lgamma(a)
is smooth and decays fast on both sides; the trapezoid rule on such
integrands converges geometrically, which the refinement loops rely on.

Zero temperature: beta^{P/2} Z_beta tends to

    Z_inf = det(S)^{-1/2} prod_l (N_l/2)^{P/2} E[G^{-P/2} exp(-omega / G)],

with G = prod_l g_l and omega = y^T S^-1 y prod_l N_l / 2^{L+1}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import gammaln, kve, logsumexp, polygamma

from .errors import (ConfigError, IntegrableSingularity, MethodCostExceeded, NonFiniteObjective,
                     ShapeMismatch, SingularGram)
from .fc import FcNetworkSpec
from .mcstats import log_mean_exp
from .rng import map_chunks

QUAD_RTOL = 1e-8
QUAD_NODE_CAP = {1: 1 << 16, 2: 1 << 11, 3: 1 << 7}
WINDOW_MARGIN = 45.0


@dataclass
class EvidenceResult:
    """``error_estimate`` is an absolute error on ``log_value`` (a relative error on the value)."""

    log_value: float
    method: str
    error_estimate: float
    converged: bool = True

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))


@dataclass
class OmegaStatistic:
    omega: float


# --------------------------------------------------------------------------
# data reduction


def _check(spec: FcNetworkSpec, x, y):
    if not isinstance(spec, FcNetworkSpec) or spec.d != 1:
        raise ConfigError("evidence is defined for fully-connected networks with D = 1")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != spec.n0:
        raise ShapeMismatch(f"x must be {spec.n0} x P, got {x.shape}")
    y = np.asarray(y, dtype=float).ravel()
    if y.size != x.shape[1]:
        raise ShapeMismatch(f"y has {y.size} entries for P = {x.shape[1]}")
    return x, y


def _spectrum(spec, x, y):
    """Eigenvalues e of X^T X/(N_0 lambda*) and the rotated labels z."""
    s = x.T @ x / (spec.n0 * spec.lambda_star)
    if s.size == 0:
        return np.zeros(0), np.zeros(0)
    e, v = np.linalg.eigh(s)
    return np.clip(e, 0.0, None), v.T @ y


def _shapes(spec) -> np.ndarray:
    return np.asarray(spec.widths, dtype=float) / 2.0


def _log_det_and_quad(spec, x, y):
    """(log det S, y^T S^-1 y) via Cholesky; SingularGram if S is not PD."""
    s = x.T @ x / (spec.n0 * spec.lambda_star)
    p = s.shape[0]
    if p == 0:
        return 0.0, 0.0
    try:
        low = np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        raise SingularGram("X^T X is singular (need P <= N_0 and independent inputs)") from None
    diag = np.diagonal(low)
    if np.min(diag) ** 2 <= p * np.finfo(float).eps * np.max(np.diagonal(s)):
        raise SingularGram("X^T X is numerically singular")
    w = np.linalg.solve(low, y)
    return float(2 * np.sum(np.log(diag))), float(w @ w)


def omega(x, y, spec: FcNetworkSpec) -> OmegaStatistic:
    """omega = y^T (X^T X)^-1 y * prod_{l=0..L}(lambda_l N_l) / 2^{L+1}."""
    x, y = _check(spec, x, y)
    _, quad = _log_det_and_quad(spec, x, y)
    # quad = y^T S^-1 y = N_0 lambda* y^T (X^T X)^-1 y
    val = quad * float(np.prod(np.asarray(spec.widths, dtype=float))) / 2.0 ** (spec.depth + 1)
    return OmegaStatistic(val)


def gp_log_evidence(x, y, spec: FcNetworkSpec, beta: float | None = None) -> float:
    """Evidence of the fixed-kernel Gaussian process (all Q_l = 1).

    With ``beta=None`` the zero-temperature value -1/2 log det S - 1/2 y^T S^-1 y.
    """
    x, y = _check(spec, x, y)
    if beta is None:
        logdet, quad = _log_det_and_quad(spec, x, y)
        return -0.5 * (logdet + quad)
    e, z = _spectrum(spec, x, y)
    return -0.5 * float(_phi_of_q(np.array(1.0), e, z, beta))


def _phi_of_q(q, e, z, beta):
    q = np.asarray(q, dtype=float)[..., None]
    return np.sum(z**2 / (q * e + 1.0 / beta) + np.log1p(beta * q * e), axis=-1)


# --------------------------------------------------------------------------
# log-gamma coordinates


def _log_gamma_t(t, a, tilt=0.0):
    """log of exp(-tilt t) times the density of t = log g, g ~ Gamma(a, 1)."""
    return (a - tilt) * t - np.exp(t) - gammaln(a)


def _window(a, tilt, margin):
    """Interval where the tilted log density lies within ``margin`` of its peak."""
    b = a - tilt
    if b <= 0:
        raise NonFiniteObjective("tilted gamma density is not integrable at -infinity")
    t_max = np.log(b)
    f = lambda t: (b * t - np.exp(t)) - (b * t_max - b) + margin  # noqa: E731
    lo = brentq(f, t_max - margin / b - 10.0, t_max)
    hi = brentq(f, t_max, t_max + np.log1p(margin / b) + 10.0)
    return lo, hi


def _trapz_logsum(log_f, h):
    """log of the trapezoid sum of exp(log_f) along the last axis (all axes if 1-D)."""
    w = np.zeros_like(log_f)
    w[..., 0] = w[..., -1] = np.log(0.5)
    return logsumexp(log_f + w, axis=-1) + np.log(h)


# --------------------------------------------------------------------------
# finite beta


def _quad_finite_beta(spec, e, z, beta):
    a = _shapes(spec)
    n_layers = a.size
    if n_layers > 3:
        raise MethodCostExceeded(f"tensor quadrature cost grows as nodes^L; L = {n_layers} > 3")
    scale = np.sum(np.log(2.0 / np.asarray(spec.widths, dtype=float)))
    cap = QUAD_NODE_CAP[n_layers]
    margin = WINDOW_MARGIN
    for _ in range(8):
        windows = [_window(ai, 0.0, margin) for ai in a]

        def integrate(n):
            axes = [np.linspace(lo, hi, n) for lo, hi in windows]
            grids = np.meshgrid(*axes, indexing="ij")
            log_q = scale + sum(grids)
            log_f = sum(_log_gamma_t(g, ai) for g, ai in zip(grids, a))
            log_f = log_f - 0.5 * _phi_of_q(np.exp(log_q), e, z, beta)
            total = log_f
            for ax, (lo, hi) in zip(axes, windows):
                total = _trapz_logsum(total, ax[1] - ax[0])
            edge = max(
                float(np.max(np.take(log_f, idx, axis=k))) for k in range(n_layers) for idx in (0, -1)
            )
            volume = float(np.sum([np.log(hi - lo) for lo, hi in windows]))
            return float(total), edge + volume - float(total)

        n = 16
        prev, edge_rel = integrate(n)
        err = np.inf
        while n < cap:
            n *= 2
            cur, edge_rel = integrate(n)
            err = abs(np.expm1(cur - prev))
            prev = cur
            if err < QUAD_RTOL:
                break
        if edge_rel < np.log(1e-12):
            return EvidenceResult(prev, "quadrature", float(err), converged=err < QUAD_RTOL)
        margin += 45.0
    return EvidenceResult(prev, "quadrature", float(max(err, np.exp(edge_rel))), converged=False)


def _mc_gamma_products(spec, n_samples, rng, fn, threads=None):
    a = _shapes(spec)

    def chunk(size, gen):
        log_g = np.log(gen.standard_gamma(a, size=(size, a.size)))
        return fn(log_g.sum(axis=1))

    return np.concatenate(map_chunks(chunk, n_samples, rng, threads=threads))


def evidence_finite_beta(spec: FcNetworkSpec, x, y, beta: float, method: str = "quadrature",
                         n_samples: int = 10**6, rng=0, threads=None) -> EvidenceResult:
    """Z_beta = E_prior[exp(-Phi_beta / 2)] by tensor quadrature or Monte Carlo."""
    if not beta > 0:
        raise ConfigError("beta must be > 0")
    x, y = _check(spec, x, y)
    if y.size == 0:
        return EvidenceResult(0.0, method, 0.0)
    e, z = _spectrum(spec, x, y)
    if method == "quadrature":
        return _quad_finite_beta(spec, e, z, beta)
    if method == "monte_carlo":
        scale = np.sum(np.log(2.0 / np.asarray(spec.widths, dtype=float)))
        vals = _mc_gamma_products(
            spec, n_samples, rng, lambda log_g: -0.5 * _phi_of_q(np.exp(log_g + scale), e, z, beta), threads
        )
        lz, se = log_mean_exp(vals)
        return EvidenceResult(lz, "monte_carlo", se)
    raise ConfigError(f"unknown finite-beta method {method!r}")


# --------------------------------------------------------------------------
# zero temperature


def _log_prefactor(spec, x, y, p):
    logdet, _ = _log_det_and_quad(spec, x, y)
    widths = np.asarray(spec.widths, dtype=float)
    return -0.5 * logdet + 0.5 * p * float(np.sum(np.log(widths / 2.0)))


def _log_expectation_bessel(a, p, om):
    """log E[g^{-P/2} exp(-omega/g)], g ~ Gamma(a, 1), via Macdonald's function."""
    nu = a - p / 2.0
    if om == 0.0:
        if nu <= 0:
            raise NonFiniteObjective("zero-temperature evidence diverges: omega = 0 and N <= P")
        return float(gammaln(nu) - gammaln(a))
    r = 2.0 * np.sqrt(om)
    return float(np.log(2.0) + 0.5 * nu * np.log(om) + np.log(kve(nu, r)) - r - gammaln(a))


@lru_cache(maxsize=64)
def _log_conv_grid(shapes: tuple, tilt_total: float, om: float, margin: float, refine: int):
    """log of the density of T = sum_l t_l (tilted by exp(-tilt_total T)) on a uniform grid.

    exp(-s T) factorises as prod_l exp(-s t_l), so every coordinate carries
    the full tilt. A coordinate with shape <= s is not integrable on its
    own; its lower end is then cut where exp(-omega e^{-T}) is negligible.
    """
    a = np.asarray(shapes, dtype=float)
    share = np.full_like(a, tilt_total)
    sds = np.sqrt(polygamma(1, a))
    h = float(np.min(sds)) / (16.0 * 2**refine)
    his, los = [], []
    for ai, si in zip(a, share):
        if ai - si > 0:
            lo, hi = _window(ai, si, margin)
        else:
            lo, hi = None, _window(ai, 0.0, margin)[1] + 5.0
        los.append(lo)
        his.append(hi)
    for k, lo in enumerate(los):
        if lo is None:
            if om <= 0:
                raise NonFiniteObjective("zero-temperature integrand diverges at small q")
            cut = np.log(om / (margin + 50.0))
            los[k] = cut - sum(his[j] for j in range(len(his)) if j != k)
    grids = [np.arange(lo, hi + h, h) for lo, hi in zip(los, his)]
    logs = [(ai - si) * g - np.exp(g) - gammaln(ai) for g, ai, si in zip(grids, a, share)]
    start = sum(g[0] for g in grids)
    peak = 0.0
    dens = np.ones(1)
    for lg in logs:
        m = float(lg.max())
        peak += m
        dens = np.convolve(dens, np.exp(lg - m)) * h
    dens = dens / h  # the first factor is a density, not a convolution step
    t = start + h * np.arange(dens.size)
    with np.errstate(divide="ignore"):
        log_dens = np.log(dens) + peak
    return t, log_dens, h


def _log_expectation_conv(a, p, om, margin=WINDOW_MARGIN):
    """log E[G^{-P/2} exp(-omega/G)] by log-domain convolution plus trapezoid."""
    results = []
    for refine in range(0, 6):
        t, log_f, h = _log_conv_grid(tuple(float(v) for v in a), p / 2.0, float(om), margin, refine)
        integrand = log_f - om * np.exp(-t)
        val = float(_trapz_logsum(integrand, h))
        results.append(val)
        if len(results) >= 2 and abs(np.expm1(results[-1] - results[-2])) < 1e-10:
            break
    err = abs(np.expm1(results[-1] - results[-2])) if len(results) > 1 else np.inf
    # integrand left at the window ends bounds the truncation error
    ends = max(integrand[0], integrand[-1]) - float(np.max(integrand))
    return results[-1], float(max(err, np.exp(min(ends, 0.0))))


def evidence_zero_temperature(spec: FcNetworkSpec, x, y, method: str = "log_convolution",
                              n_samples: int = 10**6, rng=0, threads=None) -> EvidenceResult:
    """Z_inf = lim beta^{P/2} Z_beta (same constant convention as finite beta)."""
    x, y = _check(spec, x, y)
    p = y.size
    if p < 3:
        warnings.warn("P < 3: the zero-temperature integrand has an integrable singularity",
                      IntegrableSingularity, stacklevel=2)
    pre = _log_prefactor(spec, x, y, p)
    om = omega(x, y, spec).omega
    a = _shapes(spec)
    if method == "bessel_closed_form":
        if a.size != 1:
            raise ConfigError("the Bessel closed form covers L = 1 only")
        return EvidenceResult(pre + _log_expectation_bessel(float(a[0]), p, om), method, 1e-12)
    if method == "log_convolution":
        val, err = _log_expectation_conv(a, p, om)
        return EvidenceResult(pre + val, method, err)
    if method == "monte_carlo":
        vals = _mc_gamma_products(spec, n_samples, rng, lambda log_g: -0.5 * p * log_g - om * np.exp(-log_g),
                                  threads)
        lz, se = log_mean_exp(vals)
        return EvidenceResult(pre + lz, method, se)
    raise ConfigError(f"unknown zero-temperature method {method!r}")


# --------------------------------------------------------------------------
# density of a product of gamma variables


@lru_cache(maxsize=32)
def _density_spline(ns: tuple):
    a = np.asarray(ns, dtype=float) / 2.0
    t, log_f, h = _log_conv_grid(tuple(a), 0.0, 0.0, WINDOW_MARGIN + 15.0, 2)
    keep = np.isfinite(log_f)
    return CubicSpline(t[keep], log_f[keep]), float(t[keep][0]), float(t[keep][-1])


def gamma_product_density(ns, q) -> np.ndarray:
    """Density of prod_l (Q~_l / 2) for independent chi-square Q~_l with ``ns`` dofs.

    Each factor is Gamma(N_l/2, 1); the log density of the log-product is
    built by convolution on a grid and interpolated.
    """
    ns = tuple(int(n) for n in np.atleast_1d(ns))
    if min(ns) < 1:
        raise ConfigError("degrees of freedom must be >= 1")
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ConfigError("q must be > 0")
    spline, lo, hi = _density_spline(ns)
    t = np.log(q)
    out = np.where((t >= lo) & (t <= hi), np.exp(spline(np.clip(t, lo, hi)) - t), 0.0)
    return out if out.ndim else float(out)

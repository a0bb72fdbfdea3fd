"""Rate functions of the wide-network limits and their minimisers.

Optimisation runs in log-Cholesky coordinates theta: Q = L L^T with
L_ii = exp(theta_ii) and L_ij = theta_ij below the diagonal. Every theta
maps to a positive-definite Q, so no projection is ever needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigError, NoInteriorMinimum, NonFiniteObjective, ShapeMismatch
from .fc import FcNetworkSpec, input_gram, sample_mixing
from .posterior import meanfield_mixing
from .spd import cholesky

GTOL = 1e-8
SADDLE_BETA = 1e6
SADDLE_BETA_CHECK = 1e7


def _as_qs(qs) -> np.ndarray:
    qs = np.asarray(qs, dtype=float)
    if qs.ndim == 2:
        qs = qs[None]
    if qs.ndim != 3 or qs.shape[-1] != qs.shape[-2]:
        raise ShapeMismatch(f"expected a stack of L square matrices, got {qs.shape}")
    return qs


def _lazy_terms(low) -> float:
    """sum_l (tr Q_l - log det Q_l) from Cholesky factors."""
    diag = np.diagonal(low, axis1=-2, axis2=-1)
    return float(np.sum(low**2) - 2.0 * np.sum(np.log(diag)))


def rate_lazy(qs) -> float:
    """1/2 sum_l (tr Q_l - log det Q_l) - D L / 2."""
    qs = _as_qs(qs)
    low = cholesky(qs)
    n_layers, d = qs.shape[0], qs.shape[-1]
    return 0.5 * _lazy_terms(low) - 0.5 * d * n_layers


def theta_from_qs(qs) -> np.ndarray:
    low = cholesky(_as_qs(qs))
    theta = np.tril(low, -1)
    idx = np.arange(low.shape[-1])
    theta[..., idx, idx] = np.log(low[..., idx, idx])
    return theta


def chol_from_theta(theta) -> np.ndarray:
    k = theta.shape[-1]
    idx = np.arange(k)
    low = np.tril(theta, -1)
    low[..., idx, idx] = np.exp(theta[..., idx, idx])
    return low


def _lazy_value_grad(theta):
    low = chol_from_theta(theta)
    k = theta.shape[-1]
    idx = np.arange(k)
    value = 0.5 * _lazy_terms(low)
    grad = np.tril(low.copy(), -1)
    grad[..., idx, idx] = low[..., idx, idx] ** 2 - 1.0
    return value, grad, low


class MeanFieldRate:
    """I°(Q) = 1/2 sum_l (tr Q_l - log det Q_l) + 1/2 Phi°(Q) - I0 for FC networks.

    ``infimum`` (the constant I0) is computed on first use by minimising the
    unshifted objective from the identities and then cached.
    """

    def __init__(self, spec: FcNetworkSpec, x, y, beta: float):
        if not isinstance(spec, FcNetworkSpec):
            raise ConfigError("the mean-field rate is implemented for fully-connected networks")
        if not beta > 0:
            raise ConfigError("beta must be > 0")
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] != spec.n0:
            raise ShapeMismatch(f"x must be {spec.n0} x P, got {x.shape}")
        y = np.asarray(y, dtype=float).ravel()
        if y.size != spec.d * x.shape[1]:
            raise ShapeMismatch(f"y must have D*P = {spec.d * x.shape[1]} entries")
        self.spec = spec
        self.gram = input_gram(spec, x)
        self.y = y
        self.beta = float(beta)
        self._infimum = None
        self._minimizer = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.spec.depth, self.spec.d, self.spec.d)

    def _phi0_and_m(self, low):
        """Phi° and M = V^T G V with v = (Sigma_11 + I/beta)^-1 y reshaped P x D."""
        d, p = self.spec.d, self.gram.shape[0]
        prod = low[0].T
        for ell in range(1, low.shape[0]):
            prod = prod @ low[ell].T
        q_top = prod.T @ prod
        a = np.kron(self.gram, q_top) + np.eye(d * p) / self.beta
        c = cholesky(a)
        v = np.linalg.solve(c.T, np.linalg.solve(c, self.y))
        vm = v.reshape(p, d)
        return float(self.y @ v), vm.T @ self.gram @ vm

    def value_grad(self, theta):
        """Unshifted objective and its gradient in log-Cholesky coordinates."""
        theta = np.asarray(theta, dtype=float)
        lazy, grad, low = _lazy_value_grad(theta)
        phi0, m = self._phi0_and_m(low)
        us = [lw.T for lw in low]
        n_layers = len(us)
        eye = np.eye(self.spec.d)
        prefix = [eye]
        for u in us:
            prefix.append(prefix[-1] @ u)
        suffix = [eye] * (n_layers + 1)
        for ell in range(n_layers - 1, -1, -1):
            suffix[ell] = us[ell] @ suffix[ell + 1]
        p_mat = prefix[-1]
        idx = np.arange(self.spec.d)
        for ell in range(n_layers):
            # d(Phi°/2)/dL_l = -B M P^T A with A, B the products left/right of U_l
            g_low = -suffix[ell + 1] @ m @ p_mat.T @ prefix[ell]
            g_low = np.tril(g_low)
            g_low[idx, idx] *= low[ell][idx, idx]
            grad[ell] += g_low
        value = lazy + 0.5 * phi0
        if not np.isfinite(value):
            raise NonFiniteObjective("mean-field objective is not finite")
        return value, grad

    @property
    def infimum(self) -> float:
        if self._infimum is None:
            point = _descend(self.value_grad, np.zeros(self.shape))
            self._infimum = point.value
            self._minimizer = point
        return self._infimum

    @property
    def minimizer(self) -> "RatePoint":
        self.infimum
        mp = self._minimizer
        return RatePoint(mp.qs, 0.0, mp.gradient_norm, mp.converged, mp.iterations)

    def __call__(self, qs) -> float:
        value, _ = self.value_grad(theta_from_qs(qs))
        return value - self.infimum


def rate_meanfield(qs, x, y, beta: float, spec: FcNetworkSpec, infimum: float | None = None) -> float:
    rate = MeanFieldRate(spec, x, y, beta)
    if infimum is not None:
        rate._infimum = float(infimum)
    return rate(qs)


@dataclass
class RatePoint:
    qs: np.ndarray
    value: float
    gradient_norm: float
    converged: bool = True
    iterations: int = 0
    extra: dict = field(default_factory=dict)


def _descend(value_grad, theta0, gtol=GTOL, max_iter=20_000) -> RatePoint:
    """Gradient descent with Barzilai-Borwein steps and Armijo backtracking."""
    theta = np.array(theta0, dtype=float)
    tri = np.tril(np.ones(theta.shape[-2:]))
    f, g = value_grad(theta)
    g = g * tri
    step = 1e-2 / max(1.0, float(np.linalg.norm(g)))
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= gtol:
            break
        while True:
            cand = theta - step * g
            try:
                f_new, g_new = value_grad(cand)
            except (NonFiniteObjective, ArithmeticError):
                f_new = np.inf
            if np.isfinite(f_new) and f_new <= f - 1e-4 * step * gnorm**2:
                break
            step *= 0.5
            if step < 1e-300:
                raise NonFiniteObjective("line search failed to make progress")
        g_new = g_new * tri
        s, r = cand - theta, g_new - g
        theta, f, g = cand, f_new, g_new
        sr = float(np.sum(s * r))
        step = float(np.sum(s * s)) / sr if sr > 0 else 2.0 * step
    gnorm = float(np.linalg.norm(g))
    low = chol_from_theta(theta)
    return RatePoint(low @ np.swapaxes(low, -1, -2), float(f), gnorm, gnorm <= gtol, it)


def minimize_rate(objective: str, spec: FcNetworkSpec, x=None, y=None, beta: float | None = None,
                  init="identity", gtol: float = GTOL, max_iter: int = 20_000) -> RatePoint:
    """Minimise the lazy or mean-field rate; ``value`` is the rate at the returned point."""
    shape = (spec.depth, spec.d, spec.d)
    if isinstance(init, str):
        if init != "identity":
            raise ConfigError(f"unknown init {init!r}")
        theta0 = np.zeros(shape)
    else:
        theta0 = theta_from_qs(init)
        if theta0.shape != shape:
            raise ShapeMismatch(f"init must have shape {shape}, got {theta0.shape}")
    if objective == "lazy":
        point = _descend(_lazy_value_grad_pair, theta0, gtol, max_iter)
        point.value = point.value - 0.5 * spec.d * spec.depth
        return point
    if objective == "meanfield":
        rate = MeanFieldRate(spec, x, y, beta)
        point = _descend(rate.value_grad, theta0, gtol, max_iter)
        point.value = point.value - rate.infimum
        return point
    raise ConfigError(f"unknown objective {objective!r}")


def _lazy_value_grad_pair(theta):
    value, grad, _ = _lazy_value_grad(theta)
    return value, grad


def lazy_value_grad(theta):
    """Lazy objective (without the -DL/2 constant) and its theta-gradient."""
    return _lazy_value_grad_pair(np.asarray(theta, dtype=float))


# --------------------------------------------------------------------------
# scalar saddle point


@dataclass
class SaddleScalar:
    u0: float
    residual: float
    beta: float
    sensitivity: float = float("nan")
    data_terms: dict = field(default_factory=dict)


def _saddle_parts(spec, x, y):
    if spec.d != 1:
        raise ConfigError("the scalar saddle point needs D = 1")
    if len(set(spec.widths)) != 1:
        raise ConfigError("the scalar saddle point needs equal widths")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    e, v = np.linalg.eigh(input_gram(spec, x))
    return np.clip(e, 0.0, None), v.T @ y


def _saddle_solve_once(n_layers, p, e, z, alpha, beta):
    c = alpha / p

    def f(s):
        u = np.exp(s)
        q = u**n_layers
        return n_layers * (u - s) + c * np.sum(z**2 / (q * e + 1 / beta) + np.log1p(beta * q * e))

    def df(u):
        q = u**n_layers
        dq = n_layers * u ** (n_layers - 1)
        data = np.sum(-(z**2) * e / (q * e + 1 / beta) ** 2 + beta * e / (1 + beta * q * e))
        return n_layers * (1 - 1 / u) + c * dq * data

    lo, hi = np.log(1e-12), np.log(1e12)
    grid = np.linspace(lo, hi, 481)
    vals = np.array([f(s) for s in grid])
    k = int(np.argmin(vals))
    if k in (0, grid.size - 1):
        raise NoInteriorMinimum("saddle objective is monotone on the bracket [1e-12, 1e12]")
    res = minimize_scalar(f, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="brent",
                          options={"xtol": 1e-14})
    u = float(np.exp(res.x))
    a, b = np.exp(grid[k - 1]), np.exp(grid[k + 1])
    if df(a) < 0 < df(b):
        u = brentq(df, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return u, abs(float(df(u)))


def saddle_scalar_solve(spec: FcNetworkSpec, x, y, alpha: float, beta: float | None = None) -> SaddleScalar:
    """Minimise L(u - log u) + (alpha/P)[y^T(u^L S + I/beta)^-1 y + log det(I + beta u^L S)].

    ``beta=None`` stands for the zero-temperature limit, approximated at
    beta = 1e6; the shift of u0 when moving to 1e7 is reported as ``sensitivity``.
    """
    e, z = _saddle_parts(spec, x, y)
    p = z.size
    if p == 0 or alpha == 0:
        return SaddleScalar(1.0, 0.0, beta if beta is not None else SADDLE_BETA)
    n_layers = spec.depth
    b = SADDLE_BETA if beta is None else float(beta)
    u0, res = _saddle_solve_once(n_layers, p, e, z, alpha, b)
    out = SaddleScalar(u0, res, b)
    if beta is None:
        u1, _ = _saddle_solve_once(n_layers, p, e, z, alpha, SADDLE_BETA_CHECK)
        out.sensitivity = abs(u1 - u0)
    q = u0**n_layers
    out.data_terms = {
        "quadratic": float(np.sum(z**2 / (q * e + 1 / b))),
        "logdet": float(np.sum(np.log1p(b * q * e))),
    }
    return out


# --------------------------------------------------------------------------
# concentration


@dataclass
class ConcentrationTable:
    widths: list
    distances: list
    std_errors: list
    slope: float


def weighted_mode(values, log_weights=None, bins: int = 400) -> float:
    """Mode of a (weighted) sample: Gaussian-smoothed histogram, refined by a parabola."""
    values = np.asarray(values, dtype=float).ravel()
    if log_weights is None:
        w = np.full(values.size, 1.0 / values.size)
    else:
        lw = np.asarray(log_weights, dtype=float)
        w = np.exp(lw - lw.max())
        w /= w.sum()
    mean = float(np.sum(w * values))
    sd = float(np.sqrt(np.sum(w * (values - mean) ** 2)))
    hist, edges = np.histogram(values, bins=bins, range=(mean - 4 * sd, mean + 4 * sd), weights=w)
    # kernel width 0.1 sd (5 bins) keeps the smoothing bias on the mode small
    dens = gaussian_filter1d(hist, sigma=5.0, mode="constant")
    k = int(np.clip(np.argmax(dens), 1, bins - 2))
    centres = 0.5 * (edges[:-1] + edges[1:])
    y0, y1, y2 = dens[k - 1 : k + 2]
    denom = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / denom if denom < 0 else 0.0
    return float(centres[k] + shift * (centres[1] - centres[0]))


def _loglog_slope(widths, distances) -> float:
    return float(np.polyfit(np.log(widths), np.log(distances), 1)[0])


def concentration_probe(spec: FcNetworkSpec, regime: str = "lazy", n_widths=(10, 100, 1000), rng=0,
                        n_draws: int = 20_000, x=None, y=None, beta: float | None = None,
                        threads=None) -> ConcentrationTable:
    """Mean Frobenius distance of Q^(L) to its concentration point across widths."""
    from .rng import as_stream

    stream = as_stream(rng)
    dists, ses = [], []
    target = None
    if regime == "meanfield":
        target_point = MeanFieldRate(spec, x, y, beta).minimizer
        low = cholesky(target_point.qs)
        prod = low[0].T
        for ell in range(1, low.shape[0]):
            prod = prod @ low[ell].T
        target = prod.T @ prod
    elif regime != "lazy":
        raise ConfigError(f"unknown regime {regime!r}")
    for k, n in enumerate(n_widths):
        s = FcNetworkSpec(spec.n0, (int(n),) * spec.depth, spec.d, spec.precisions)
        if regime == "lazy":
            mix = sample_mixing(s, stream.child(k), size=n_draws)
            dist = np.linalg.norm(mix.q_top - np.eye(spec.d), axis=(-2, -1))
            dists.append(float(dist.mean()))
            ses.append(float(dist.std(ddof=1) / np.sqrt(dist.size)))
        else:
            mixture = meanfield_mixing(s, x, y, beta, n_draws, stream.child(k), threads=threads)
            dist = np.linalg.norm(mixture.core - target, axis=(-2, -1))
            m, se = mixture.weighted_mean(dist)
            dists.append(float(m))
            ses.append(float(se))
    slope = _loglog_slope(n_widths, dists) if len(n_widths) > 1 else float("nan")
    return ConcentrationTable([int(n) for n in n_widths], dists, ses, slope)

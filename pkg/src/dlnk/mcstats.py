"""Monte Carlo summaries: moment z-scores, weighted estimators, ESS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass
class MomentComparison:
    """Per-moment two-sample z-scores between two samplers."""

    names: list[str]
    first: np.ndarray
    second: np.ndarray
    z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z))) if self.z.size else 0.0

    def passed(self, threshold: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.z) <= threshold))


def _mean_se(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = f.shape[0]
    return f.mean(axis=0), f.std(axis=0, ddof=1) / np.sqrt(n)


def _z(m1, s1, m2, s2):
    se = np.sqrt(s1**2 + s2**2)
    diff = m1 - m2
    # Exactly-zero features (e.g. a zero input column) compare as equal.
    return np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff == 0, 0.0, np.inf))


def moment_features(s: np.ndarray, fourth: list[tuple[int, int]] | None = None):
    """First, second and selected fourth-order features of flat draws.

    ``s`` has shape (n, k). Second moments cover the upper triangle of
    E[s_i s_j]; ``fourth`` lists index pairs (i, j) for E[s_i^2 s_j^2].
    """
    n, k = s.shape
    iu, ju = np.triu_indices(k)
    feats = [s, s[:, iu] * s[:, ju]]
    names = [f"E[s{i}]" for i in range(k)] + [f"E[s{i}s{j}]" for i, j in zip(iu, ju)]
    if fourth:
        f4 = np.stack([s[:, i] ** 2 * s[:, j] ** 2 for i, j in fourth], axis=1)
        feats.append(f4)
        names += [f"E[s{i}^2 s{j}^2]" for i, j in fourth]
    return names, np.concatenate(feats, axis=1)


def compare_moments(a: np.ndarray, b: np.ndarray, fourth=None) -> MomentComparison:
    """Two-sample comparison of raw moments of flat draws ``a`` and ``b``."""
    a = a.reshape(a.shape[0], -1)
    b = b.reshape(b.shape[0], -1)
    names, fa = moment_features(a, fourth)
    _, fb = moment_features(b, fourth)
    ma, sa = _mean_se(fa)
    mb, sb = _mean_se(fb)
    return MomentComparison(names, ma, mb, _z(ma, sa, mb, sb))


def normalized_weights(log_weights: np.ndarray) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    return np.exp(lw - logsumexp(lw))


def importance_ess(log_weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2 from unnormalised log weights."""
    lw = np.asarray(log_weights, dtype=float)
    return float(np.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))


def log_mean_exp(log_values: np.ndarray) -> tuple[float, float]:
    """log of the sample mean of exp(values) and the standard error of that log."""
    lv = np.asarray(log_values, dtype=float)
    n = lv.size
    lm = float(logsumexp(lv) - np.log(n))
    w = np.exp(lv - lm)
    se = float(w.std(ddof=1) / np.sqrt(n)) if n > 1 else np.inf
    return lm, se


def weighted_mean(values: np.ndarray, log_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Self-normalised weighted mean and its delta-method standard error."""
    v = np.asarray(values, dtype=float)
    w = normalized_weights(log_weights)
    shape = (-1,) + (1,) * (v.ndim - 1)
    w = w.reshape(shape)
    mean = np.sum(w * v, axis=0)
    se = np.sqrt(np.sum(w**2 * (v - mean) ** 2, axis=0))
    return mean, se


def weighted_variance(means: np.ndarray, variances: np.ndarray, log_weights: np.ndarray):
    """Mixture variance E_w[v + m^2] - (E_w m)^2 with a delta-method s.e.

    ``means`` and ``variances`` are scalars per draw (shape (n,)).
    """
    w = normalized_weights(log_weights)
    m = np.asarray(means, dtype=float)
    v = np.asarray(variances, dtype=float)
    a = np.sum(w * (v + m**2))
    b = np.sum(w * m)
    var = a - b**2
    infl = (v + m**2 - a) - 2 * b * (m - b)
    return float(var), float(np.sqrt(np.sum(w**2 * infl**2)))


def autocorr_ess(chains: np.ndarray) -> float:
    """ESS of a scalar summary from several chains, shape (n_chains, n_steps).

    Per-chain integrated autocorrelation with Geyer's initial monotone
    positive-pair truncation; chain ESS values are summed.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    total = 0.0
    for x in chains:
        n = x.size
        x = x - x.mean()
        var = x.var()
        if n < 4 or var == 0:
            total += n
            continue
        size = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(x, size)
        acf = np.fft.irfft(f * np.conj(f), size)[:n] / (n * var)
        pairs = acf[: n - n % 2].reshape(-1, 2).sum(axis=1)
        tau = -1.0
        running = np.inf
        for g in pairs:
            if g <= 0:
                break
            running = min(running, g)
            tau += 2 * running
        total += n / max(tau, 1e-12)
    return float(total)

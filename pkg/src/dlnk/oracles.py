"""Brute-force weight-space posterior, the reference for the mixture predictive.

Weights are drawn from their Gaussian prior, pushed through the network at
the test and training inputs, and reweighted by the Gaussian likelihood
exp(-beta/2 |y - s|^2). No mixing variables are involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import sample_prior_conv_weightspace
from .fc import sample_prior_weightspace, vec_outputs
from .mcstats import importance_ess
from .posterior import _as_x, _as_y, _enlarge, _is_conv, output_dim


@dataclass
class OraclePredictive:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    ess: float


def weightspace_posterior(spec, x0, x, y, beta: float, n_samples: int, rng, threads=None) -> OraclePredictive:
    """Importance-sampled posterior moments of the output at ``x0``."""
    xt = _enlarge(spec, x0, x)
    y = _as_y(spec, _as_x(spec, x), y)
    d = output_dim(spec)
    if _is_conv(spec):
        s = sample_prior_conv_weightspace(spec, xt, n_samples, rng, threads=threads)
    else:
        s = vec_outputs(sample_prior_weightspace(spec, xt, n_samples, rng, threads=threads))
    s0, s1 = s[:, :d], s[:, d:]
    log_w = -0.5 * beta * np.sum((s1 - y) ** 2, axis=1)
    w = np.exp(log_w - log_w.max())
    w /= w.sum()
    mean = w @ s0
    dm = s0 - mean
    outer = dm[:, :, None] * dm[:, None, :]
    cov = np.einsum("n,nij->ij", w, outer)
    mean_se = np.sqrt(np.einsum("n,nd->d", w**2, dm**2))
    # delta method for the weighted covariance: influence (s-m)(s-m)^T - cov
    cov_se = np.sqrt(np.einsum("n,nij->ij", w**2, (outer - cov) ** 2))
    return OraclePredictive(mean, cov, mean_se, cov_se, importance_ess(log_w))

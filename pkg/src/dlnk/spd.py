"""SPD matrices, Cholesky factors, Kronecker products and Wishart draws.

All functions accept stacks of matrices: any leading axes are treated as
batch dimensions.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DofTooSmall, EigenvalueViolation, NotPositiveDefinite, NotSymmetric, ShapeMismatch
from .rng import as_generator, map_chunks

SYMMETRY_RTOL = 1e-12


def symmetrize(m, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    """Return (M + M^T)/2 after checking the asymmetry is below ``rtol``."""
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ShapeMismatch(f"expected square matrices, got shape {m.shape}")
    mt = np.swapaxes(m, -1, -2)
    scale = np.max(np.abs(m), axis=(-2, -1), keepdims=True)
    gap = np.max(np.abs(m - mt), axis=(-2, -1), keepdims=True)
    if np.any(gap > rtol * np.maximum(scale, np.finfo(float).tiny)):
        raise NotSymmetric(f"asymmetry {float(np.max(gap / np.maximum(scale, 1e-300))):.3g} exceeds {rtol}")
    return 0.5 * (m + mt)


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor with positive diagonal.

    A pivot (squared diagonal entry of the factor) at or below
    ``dim * eps * max(diag(m))`` declares the matrix not positive definite.
    """
    m = symmetrize(m)
    dim = m.shape[-1]
    try:
        low = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    pivots = np.diagonal(low, axis1=-2, axis2=-1) ** 2
    maxdiag = np.max(np.diagonal(m, axis1=-2, axis2=-1), axis=-1, keepdims=True)
    if not np.all(np.isfinite(low)) or np.any(pivots <= dim * np.finfo(float).eps * maxdiag):
        raise NotPositiveDefinite("pivot below the scaled threshold")
    return low


def is_spd(m) -> bool:
    try:
        cholesky(m)
    except (NotPositiveDefinite, NotSymmetric):
        return False
    return True


def logdet_spd(m) -> np.ndarray:
    low = cholesky(m)
    return 2.0 * np.sum(np.log(np.diagonal(low, axis1=-2, axis2=-1)), axis=-1)


def kron(a, b) -> np.ndarray:
    """Kronecker product, broadcasting over leading batch axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("kron expects (batched) matrices")
    out = np.einsum("...ij,...kl->...ikjl", a, b)
    m, n = a.shape[-2:]
    p, q = b.shape[-2:]
    return out.reshape(out.shape[:-4] + (m * p, n * q))


def _bartlett(dim: int, dof: int, size: int, gen: np.random.Generator) -> np.ndarray:
    """Lower-triangular Bartlett factors A with A A^T ~ Wishart(I, dof)."""
    a = np.zeros((size, dim, dim))
    rows, cols = np.tril_indices(dim, -1)
    if rows.size:
        a[:, rows, cols] = gen.standard_normal((size, rows.size))
    chi2 = gen.chisquare(dof - np.arange(dim), size=(size, dim))
    idx = np.arange(dim)
    a[:, idx, idx] = np.sqrt(chi2)
    return a


def sample_wishart(dim: int, dof: int, scale, rng, size: int | None = None) -> np.ndarray:
    """Draw from W_dim(scale, dof) with the Bartlett construction.

    Returns a (dim, dim) array, or (size, dim, dim) when ``size`` is given.
    """
    if dim < 1:
        raise ShapeMismatch("dim must be >= 1")
    if dof <= dim:
        raise DofTooSmall(f"Wishart density needs dof > dim (got dof={dof}, dim={dim})")
    scale = np.asarray(scale, dtype=float)
    if scale.shape != (dim, dim):
        raise ShapeMismatch(f"scale must be {dim}x{dim}, got {scale.shape}")
    low = cholesky(scale)
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    a = low @ _bartlett(dim, dof, n, gen)
    w = a @ np.swapaxes(a, -1, -2)
    return w[0] if size is None else w


def sample_matrix_normal(rows: int, cols: int, row_cov, col_cov, rng, size: int | None = None) -> np.ndarray:
    """Centred matrix normal MN(0, row_cov, col_cov); vec(Z) ~ N(0, col_cov ⊗ row_cov)."""
    row_cov = np.asarray(row_cov, dtype=float)
    col_cov = np.asarray(col_cov, dtype=float)
    if row_cov.shape != (rows, rows) or col_cov.shape != (cols, cols):
        raise ShapeMismatch(
            f"covariances {row_cov.shape}, {col_cov.shape} do not match a {rows}x{cols} draw"
        )
    a = cholesky(row_cov)
    b = cholesky(col_cov)
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    z = a @ gen.standard_normal((n, rows, cols)) @ b.T
    return z[0] if size is None else z


class LaplaceCheck(NamedTuple):
    mc_estimate: float
    closed_form: float
    std_error: float


def wishart_laplace_closed_form(scale, dof: int, c, alpha: float) -> float:
    scale = np.asarray(scale, dtype=float)
    c = np.asarray(c, dtype=float)
    m = np.eye(scale.shape[0]) + alpha * scale @ c
    eig = np.linalg.eigvals(m)
    if np.any(eig.real <= 0):
        raise EigenvalueViolation("1 + alpha * scale * c must have strictly positive eigenvalues")
    return float(np.prod(eig.real) ** (-dof / 2))


def wishart_laplace_check(scale, dof: int, c, alpha: float, rng, n_samples: int = 10**6) -> LaplaceCheck:
    """Monte Carlo vs closed form for E[exp(-(alpha/2) tr(c Q))], Q ~ W(scale, dof)."""
    closed = wishart_laplace_closed_form(scale, dof, c, alpha)
    scale = np.asarray(scale, dtype=float)
    c = symmetrize(c)
    dim = scale.shape[0]

    def draw(size, gen):
        q = sample_wishart(dim, dof, scale, gen, size=size)
        return np.exp(-0.5 * alpha * np.einsum("ij,nji->n", c, q))

    vals = np.concatenate(map_chunks(draw, n_samples, rng))
    se = float(vals.std(ddof=1) / np.sqrt(vals.size))
    return LaplaceCheck(float(vals.mean()), closed, se)

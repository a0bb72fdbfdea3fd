"""Fully-connected deep linear networks: forward pass and prior samplers.

Outputs are D x P matrices S (column mu is the output for input x^mu).
The stacked output vector is vec(S) with columns stacked, i.e. index
``mu * D + d``; kernels are laid out the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DofTooSmall, ShapeMismatch
from .rng import as_generator, concat_chunks
from .spd import _bartlett, cholesky, kron


@dataclass(frozen=True)
class FcNetworkSpec:
    n0: int
    widths: tuple[int, ...]
    d: int
    precisions: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.precisions is None:
            object.__setattr__(self, "precisions", (1.0,) * (len(self.widths) + 1))
        object.__setattr__(self, "precisions", tuple(float(p) for p in self.precisions))
        if len(self.widths) < 1:
            raise ConfigError("need at least one hidden layer (L >= 1)")
        if self.n0 < 1 or self.d < 1 or min(self.widths) < 1:
            raise ConfigError("input dim, output dim and widths must be >= 1")
        if len(self.precisions) != len(self.widths) + 1:
            raise ConfigError(f"need L+1 = {len(self.widths) + 1} precisions, got {len(self.precisions)}")
        if min(self.precisions) <= 0:
            raise ConfigError("precisions must be > 0")

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def lambda_star(self) -> float:
        return float(np.prod(self.precisions))

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n0, *self.widths, self.d)

    def check_mixture(self) -> None:
        if min(self.widths) <= self.d:
            raise DofTooSmall(
                f"mixture representation needs min width > D (widths={self.widths}, D={self.d})"
            )


@dataclass(frozen=True)
class FcDataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2:
            raise ShapeMismatch("x must be an N_0 x P matrix")
        if x.shape[1] and y.size % x.shape[1]:
            raise ShapeMismatch(f"y length {y.size} is not a multiple of P={x.shape[1]}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def p(self) -> int:
        return self.x.shape[1]


@dataclass
class MixingSample:
    """Mixing draw(s) (Q_1..Q_L) with cached lower Cholesky factors.

    Arrays may carry a leading batch axis: ``qs`` is (..., L, D, D).
    """

    qs: np.ndarray
    chol: np.ndarray
    q_top: np.ndarray

    def __len__(self):
        return self.qs.shape[0] if self.qs.ndim == 4 else 1


def _check_x(spec: FcNetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != spec.n0:
        raise ShapeMismatch(f"x must be {spec.n0} x P, got {x.shape}")
    return x


def fc_forward(spec: FcNetworkSpec, weights, x) -> np.ndarray:
    """S = (1/sqrt(N_L)) W^(L) ... (1/sqrt(N_0)) W^(0) X, biases zero."""
    x = _check_x(spec, x)
    sizes = spec.layer_sizes
    if len(weights) != spec.depth + 1:
        raise ShapeMismatch(f"expected {spec.depth + 1} weight matrices, got {len(weights)}")
    h = x
    for ell, w in enumerate(weights):
        w = np.asarray(w, dtype=float)
        if w.shape[-2:] != (sizes[ell + 1], sizes[ell]):
            raise ShapeMismatch(f"W^({ell}) must be {sizes[ell + 1]}x{sizes[ell]}, got {w.shape}")
        h = w @ h / np.sqrt(sizes[ell])
    return h


def q_top_from_chol(chol: np.ndarray) -> np.ndarray:
    """Q^(L) = (U_1...U_L)^T (U_1...U_L) with U_l = chol_l^T."""
    prod = np.swapaxes(chol[..., 0, :, :], -1, -2)
    for ell in range(1, chol.shape[-3]):
        prod = prod @ np.swapaxes(chol[..., ell, :, :], -1, -2)
    return np.swapaxes(prod, -1, -2) @ prod


def _wishart_layers(dofs, dim, size, gen):
    """Q_l ~ W(I/N_l, N_l) for each layer; returns (qs, chol)."""
    qs = np.empty((size, len(dofs), dim, dim))
    chol = np.empty_like(qs)
    for ell, n in enumerate(dofs):
        a = _bartlett(dim, n, size, gen) / np.sqrt(n)
        # Bartlett factor is already lower-triangular with positive diagonal.
        chol[:, ell] = a
        qs[:, ell] = a @ np.swapaxes(a, -1, -2)
    return qs, chol


def sample_mixing(spec: FcNetworkSpec, rng, size: int | None = None) -> MixingSample:
    """Independent Q_l ~ W_D(I/N_l, N_l) and the assembled Q^(L)."""
    spec.check_mixture()
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    qs, chol = _wishart_layers(spec.widths, spec.d, n, gen)
    top = q_top_from_chol(chol)
    if size is None:
        return MixingSample(qs[0], chol[0], top[0])
    return MixingSample(qs, chol, top)


def mixing_from_qs(qs) -> MixingSample:
    """Build a MixingSample from given Q matrices (shape (..., L, D, D))."""
    qs = np.asarray(qs, dtype=float)
    chol = cholesky(qs)
    return MixingSample(qs, chol, q_top_from_chol(chol))


def input_gram(spec: FcNetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.T @ x / (spec.n0 * spec.lambda_star)


def kernel_fc(spec: FcNetworkSpec, x, mix) -> np.ndarray:
    """(N_0 lambda*)^-1 X^T X ⊗ Q^(L); accepts a MixingSample or Q^(L) array."""
    x = _check_x(spec, x)
    q_top = mix.q_top if isinstance(mix, MixingSample) else np.asarray(mix, dtype=float)
    return kron(input_gram(spec, x), q_top)


def sample_prior_weightspace(spec: FcNetworkSpec, x, n_samples: int, rng, threads=None) -> np.ndarray:
    """Draws of S through i.i.d. Gaussian weights; shape (n, D, P)."""
    x = _check_x(spec, x)
    sizes = spec.layer_sizes

    def draw(size, gen):
        h = np.broadcast_to(x, (size,) + x.shape)
        for ell in range(spec.depth + 1):
            w = gen.standard_normal((size, sizes[ell + 1], sizes[ell]))
            w /= np.sqrt(spec.precisions[ell])
            h = w @ h / np.sqrt(sizes[ell])
        return h

    return concat_chunks(draw, n_samples, rng, threads=threads)


def sample_prior_mixture(spec: FcNetworkSpec, x, n_samples: int, rng, threads=None) -> np.ndarray:
    """Draws S = U_L^T ... U_1^T Z X / sqrt(N_0 lambda*), one fresh mixing draw each."""
    spec.check_mixture()
    x = _check_x(spec, x)
    scale = 1.0 / np.sqrt(spec.n0 * spec.lambda_star)

    def draw(size, gen):
        _, chol = _wishart_layers(spec.widths, spec.d, size, gen)
        z = gen.standard_normal((size, spec.d, spec.n0))
        prod = np.swapaxes(chol[:, 0], -1, -2)
        for ell in range(1, spec.depth):
            prod = prod @ np.swapaxes(chol[:, ell], -1, -2)
        return np.swapaxes(prod, -1, -2) @ z @ x * scale

    return concat_chunks(draw, n_samples, rng, threads=threads)


def vec_outputs(s: np.ndarray) -> np.ndarray:
    """Column-stacked vec of (batched) D x P outputs."""
    s = np.asarray(s)
    return np.swapaxes(s, -1, -2).reshape(s.shape[:-2] + (-1,))

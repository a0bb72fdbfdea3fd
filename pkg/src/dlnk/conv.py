"""1-D convolutional deep linear networks (periodic boundary, unit stride).

Inputs are tensors laid out (example, channel, space), i.e. shape
(P, C_0, N_0). The network has a single scalar readout per example.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DofTooSmall, ShapeMismatch
from .fc import _wishart_layers
from .rng import as_generator, concat_chunks
from .spd import cholesky


@dataclass(frozen=True)
class ConvNetworkSpec:
    n0: int
    channels: tuple[int, ...]
    mask: int
    precisions: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.precisions is None:
            object.__setattr__(self, "precisions", (1.0,) * len(self.channels))
        object.__setattr__(self, "precisions", tuple(float(p) for p in self.precisions))
        if len(self.channels) < 2:
            raise ConfigError("channels lists C_0..C_L with L >= 1")
        if min(self.channels) < 1 or self.n0 < 1:
            raise ConfigError("channel counts and spatial size must be >= 1")
        if self.mask < 1 or self.mask % 2 == 0 or self.mask > self.n0:
            raise ConfigError(f"mask must be odd with 1 <= M <= N_0 (got M={self.mask}, N_0={self.n0})")
        if len(self.precisions) != len(self.channels):
            raise ConfigError(f"need L+1 = {len(self.channels)} precisions, got {len(self.precisions)}")
        if min(self.precisions) <= 0:
            raise ConfigError("precisions must be > 0")

    @property
    def depth(self) -> int:
        return len(self.channels) - 1

    @property
    def c0(self) -> int:
        return self.channels[0]

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.channels[1:]

    @property
    def lambda_star(self) -> float:
        return float(np.prod(self.precisions))

    @property
    def offsets(self) -> np.ndarray:
        k = self.mask // 2
        return np.arange(-k, k + 1)

    def check_mixture(self) -> None:
        if min(self.hidden) <= self.n0:
            raise DofTooSmall(
                f"mixture representation needs min C_l > N_0 (channels={self.hidden}, N_0={self.n0})"
            )


@dataclass(frozen=True)
class ConvDataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 3:
            raise ShapeMismatch("x must be a (P, C_0, N_0) tensor")
        if y.size != x.shape[0]:
            raise ShapeMismatch(f"y has {y.size} labels for {x.shape[0]} examples")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def p(self) -> int:
        return self.x.shape[0]


def _check_x(spec: ConvNetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (spec.c0, spec.n0):
        raise ShapeMismatch(f"x must be (P, {spec.c0}, {spec.n0}), got {x.shape}")
    return x


def translation_operator(m: int, n0: int) -> np.ndarray:
    """T_m with T_{m,ij} = delta_{j, i+m mod N_0}."""
    t = np.zeros((n0, n0))
    t[np.arange(n0), (np.arange(n0) + m) % n0] = 1.0
    return t


def _shifted(h: np.ndarray, offsets) -> np.ndarray:
    """Stack of h[..., (i + m) mod N_0] over the mask offsets m."""
    return np.stack([np.roll(h, -m, axis=-1) for m in offsets])


def conv_forward(spec: ConvNetworkSpec, weights, x) -> np.ndarray:
    """Network outputs S^mu for every example; shape (P,).

    ``weights`` holds W^(0..L-1) with shape (M, C_{l+1}, C_l), indexed by
    mask offset m + floor(M/2), and the readout W^(L) with shape (C_L, N_0).
    """
    x = _check_x(spec, x)
    if len(weights) != spec.depth + 1:
        raise ShapeMismatch(f"expected {spec.depth + 1} weight tensors, got {len(weights)}")
    h = x  # (P, C, N0)
    for ell in range(spec.depth):
        w = np.asarray(weights[ell], dtype=float)
        want = (spec.mask, spec.channels[ell + 1], spec.channels[ell])
        if w.shape != want:
            raise ShapeMismatch(f"W^({ell}) must have shape {want}, got {w.shape}")
        sh = _shifted(h, spec.offsets)  # (M, P, C, N0)
        h = np.einsum("mab,mpbi->pai", w, sh) / np.sqrt(spec.mask * spec.channels[ell])
    w_out = np.asarray(weights[-1], dtype=float)
    if w_out.shape != (spec.channels[-1], spec.n0):
        raise ShapeMismatch(f"readout must be ({spec.channels[-1]}, {spec.n0}), got {w_out.shape}")
    return np.einsum("ai,pai->p", w_out, h) / np.sqrt(spec.channels[-1] * spec.n0)


def sample_prior_conv_weightspace(spec: ConvNetworkSpec, x, n_samples: int, rng, threads=None) -> np.ndarray:
    """Output draws through i.i.d. Gaussian conv weights; shape (n, P)."""
    x = _check_x(spec, x)
    offs = spec.offsets

    def draw(size, gen):
        n_p = x.shape[0]
        h = np.broadcast_to(x, (size,) + x.shape)  # (n, P, C, N0)
        for ell in range(spec.depth):
            c_in, c_out = spec.channels[ell], spec.channels[ell + 1]
            w = gen.standard_normal((size, c_out, spec.mask * c_in)) / np.sqrt(spec.precisions[ell])
            # (n, M, C_in, P, N0) flattened so one batched matmul does the mask sum.
            sh = np.stack([np.roll(h, -m, axis=-1) for m in offs], axis=1)
            sh = sh.transpose(0, 1, 3, 2, 4).reshape(size, spec.mask * c_in, n_p * spec.n0)
            h = (w @ sh).reshape(size, c_out, n_p, spec.n0).transpose(0, 2, 1, 3)
            h = h / np.sqrt(spec.mask * c_in)
        w = gen.standard_normal((size, 1, spec.channels[-1] * spec.n0)) / np.sqrt(spec.precisions[-1])
        flat = h.reshape(size, n_p, -1)
        return (flat @ w.transpose(0, 2, 1))[..., 0] / np.sqrt(spec.channels[-1] * spec.n0)

    return concat_chunks(draw, n_samples, rng, threads=threads)


def translation_average(q, mask: int) -> np.ndarray:
    """(1/M) sum_m T_m^T q T_m, by index arithmetic; batched over leading axes."""
    q = np.asarray(q, dtype=float)
    k = mask // 2
    out = np.zeros_like(q)
    for m in range(-k, k + 1):
        out += np.roll(q, (m, m), axis=(-2, -1))
    return out / mask


def backward_tmap(spec: ConvNetworkSpec, qs, return_factors: bool = False):
    """The backward recursion Q*_L, ..., Q*_1; returns Q*_1 = T(Q_1..Q_L).

    ``qs`` has shape (..., L, N_0, N_0). With ``return_factors`` the lower
    Cholesky factors of Q*_2..Q*_L used along the way are returned too.
    """
    qs = np.asarray(qs, dtype=float)
    n_layers = qs.shape[-3]
    if n_layers != spec.depth or qs.shape[-1] != spec.n0:
        raise ShapeMismatch(f"need {spec.depth} matrices of size {spec.n0}, got {qs.shape}")
    q_star = translation_average(qs[..., -1, :, :], spec.mask)
    factors = []
    for ell in range(n_layers - 2, -1, -1):
        low = cholesky(q_star)
        factors.append(low)
        # U* = low^T, so U*^T Q U* = low Q low^T.
        inner = low @ qs[..., ell, :, :] @ np.swapaxes(low, -1, -2)
        q_star = translation_average(inner, spec.mask)
    q_star = 0.5 * (q_star + np.swapaxes(q_star, -1, -2))
    if return_factors:
        return q_star, factors[::-1]
    return q_star


def kernel_conv(spec: ConvNetworkSpec, x, tq) -> np.ndarray:
    """K_{mu nu} = sum_{r,s} tq_rs sum_a0 x^mu_{a0,r} x^nu_{a0,s} / (lambda* C_0 N_0)."""
    x = _check_x(spec, x)
    tq = np.asarray(tq, dtype=float)
    k = np.einsum("par,...rs,qas->...pq", x, tq, x)
    return k / (spec.lambda_star * spec.c0 * spec.n0)


def sample_conv_mixing(spec: ConvNetworkSpec, rng, size: int | None = None) -> np.ndarray:
    """Q_l ~ W_{N_0}(I/C_l, C_l), independent; shape (..., L, N_0, N_0)."""
    spec.check_mixture()
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    qs, _ = _wishart_layers(spec.hidden, spec.n0, n, gen)
    return qs[0] if size is None else qs


def sample_prior_conv_mixture(spec: ConvNetworkSpec, x, n_samples: int, rng, threads=None) -> np.ndarray:
    """Output draws from the Wishart mixture; shape (n, P).

    Given T(Q) = L L^T, S^mu = sum_a0 x^mu_a0 . (L z_a0) / sqrt(lambda* C_0 N_0)
    with z_a0 standard normal, which has covariance K_C even when K_C is
    singular (P > C_0 N_0).
    """
    spec.check_mixture()
    x = _check_x(spec, x)
    scale = 1.0 / np.sqrt(spec.lambda_star * spec.c0 * spec.n0)

    def draw(size, gen):
        qs, _ = _wishart_layers(spec.hidden, spec.n0, size, gen)
        low = cholesky(backward_tmap(spec, qs))
        z = gen.standard_normal((size, spec.c0, spec.n0))
        v = np.einsum("nrs,nas->nar", low, z)
        return np.einsum("par,nar->np", x, v) * scale

    return concat_chunks(draw, n_samples, rng, threads=threads)


def spectrum_lemma_check(k_tensor, s) -> tuple[float, float]:
    """Both sides of det(1 + (1 ⊗ s s^T) K) = det(1 + sum s_mu s_nu K_{., mu nu}).

    ``k_tensor`` is indexed [i, j, mu, nu]; the big matrix uses the
    multi-index (i, mu) -> i * P + mu.
    """
    k = np.asarray(k_tensor, dtype=float)
    s = np.asarray(s, dtype=float)
    n0, _, p, _ = k.shape
    big = k.transpose(0, 2, 1, 3).reshape(n0 * p, n0 * p)
    lhs = np.linalg.det(np.eye(n0 * p) + np.kron(np.eye(n0), np.outer(s, s)) @ big)
    rhs = np.linalg.det(np.eye(n0) + np.einsum("ijmn,m,n->ij", k, s, s))
    return float(lhs), float(rhs)

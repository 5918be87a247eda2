"""Linear Gaussian channel quantities for finite-support priors.

For a prior P_X on R^k and a PSD signal-to-noise matrix gamma, the channel
observes Y = gamma^{1/2} X + Z with Z ~ N(0, I_k).  This module evaluates

  psi(gamma)  = E log  int dP_X(x) exp(Z' gamma^{1/2} x + X' gamma x - x' gamma x / 2)
  F(gamma)    = E [ <x> <x>' ]          (posterior-mean outer product)
  denoiser(y) = <x>                     (posterior mean given observation y)

together with the denoiser Jacobian.  The expectation over the planted X is
an exact sum over atoms; the expectation over Z uses Gauss-Hermite
quadrature (tensor products for k in {2, 3}, seeded Sobol QMC for k > 3).
All exponentials are evaluated in log-space, so gamma far beyond the
overflow range of exp is safe.

Everything here is pure and deterministic given its inputs; nothing is
cached across calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import qmc

from .priors import DiscretePrior, moments

# Order 61 leaves ~2e-5 relative error in the psi-gradient identity around
# gamma = 10 (the integrand's bend at z = -sqrt(gamma) is narrow there);
# 121 holds it below 2e-6 across gamma <= 10 at negligible cost for k = 1.
DEFAULT_QUAD_ORDER = 121
MAX_QUAD_ORDER = 512
QMC_LOG2_POINTS = 16
_QMC_SEED = 20_170_331

_SYM_TOL = 1e-10
_EIG_TOL = 1e-10

# Planted-atom chunk size keeps the (chunk, nodes, support) logit tensors small.
_CHUNK = 2_000_000


@dataclass(frozen=True)
class GaussQuadrature:
    """Nodes/weights for expectations against N(0, 1); weights sum to 1."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def expect(self, f) -> float:
        return float(self.weights @ f(self.nodes))


@lru_cache(maxsize=32)
def gauss_hermite(order: int = DEFAULT_QUAD_ORDER) -> GaussQuadrature:
    """Gauss-Hermite rule rescaled to the standard normal weight.

    Integrates z^m exactly for m <= 2*order - 1.
    """
    if not 1 <= order <= MAX_QUAD_ORDER:
        raise ValueError(f"order must be in [1, {MAX_QUAD_ORDER}], got {order}")
    x, w = np.polynomial.hermite.hermgauss(order)
    nodes = x * np.sqrt(2.0)
    weights = w / np.sqrt(np.pi)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussQuadrature(order=order, nodes=nodes, weights=weights)


@dataclass(frozen=True)
class SNRMatrix:
    """Symmetric PSD signal-to-noise matrix together with its PSD square root.

    Eigenvalues in [-1e-10, 0) are clipped to zero: fixed-point iterations
    hand us matrices that are PSD only up to rounding.
    """

    matrix: np.ndarray
    sqrt: np.ndarray = field(init=False)

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"gamma must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("gamma must be finite")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.T).max() > _SYM_TOL * scale:
            raise ValueError("gamma must be symmetric within 1e-10")
        m = 0.5 * (m + m.T)
        eigval, eigvec = np.linalg.eigh(m)
        if eigval.min() < -_EIG_TOL * scale:
            raise ValueError(
                f"gamma has negative eigenvalue {eigval.min():.3e}; not PSD"
            )
        eigval = np.clip(eigval, 0.0, None)
        mat = (eigvec * eigval) @ eigvec.T
        mat = 0.5 * (mat + mat.T)
        root = (eigvec * np.sqrt(eigval)) @ eigvec.T
        root = 0.5 * (root + root.T)
        mat.setflags(write=False)
        root.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "sqrt", root)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def as_snr(gamma, dim: int | None = None) -> SNRMatrix:
    """Coerce a scalar or array to an SNRMatrix (scalar -> gamma * I_dim)."""
    if isinstance(gamma, SNRMatrix):
        return gamma
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        return SNRMatrix(float(g) * np.eye(dim if dim is not None else 1))
    return SNRMatrix(g)


def gaussian_nodes(dim: int, quad: GaussQuadrature):
    """Nodes/weights for E over Z ~ N(0, I_dim).

    Tensor-product Gauss-Hermite for dim <= 3, seeded Sobol QMC with 2^16
    points above that.
    """
    if dim == 1:
        return quad.nodes[:, None], quad.weights
    if dim <= 3:
        grids = np.meshgrid(*([quad.nodes] * dim), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        w = quad.weights
        for _ in range(dim - 1):
            w = np.outer(w, quad.weights).ravel()
        return nodes, w
    from scipy.special import ndtri

    sampler = qmc.Sobol(d=dim, scramble=True, seed=_QMC_SEED)
    u = sampler.random_base2(m=QMC_LOG2_POINTS)
    nodes = ndtri(np.clip(u, 1e-12, 1.0 - 1e-12))
    weights = np.full(nodes.shape[0], 1.0 / nodes.shape[0])
    return nodes, weights


# ---------------------------------------------------------------------------
# k = 1 fast paths, vectorized over a whole array of scalar gammas.


def _logits1(prior, gammas, quad):
    """Log posterior weights, shape (G, S_planted, Q, S)."""
    x = prior.atoms1d()
    g = gammas[:, None, None, None]
    z = quad.nodes[None, None, :, None]
    a = x[None, :, None, None]
    xx = x[None, None, None, :]
    return np.sqrt(g) * z * xx + g * a * xx - 0.5 * g * xx**2 + np.log(prior.probs)


def psi1(prior: DiscretePrior, gammas, quad: GaussQuadrature) -> np.ndarray:
    """Channel free energy for an array of scalar SNRs (k = 1)."""
    gammas = np.asarray(gammas, dtype=float)
    out = np.empty(gammas.shape)
    flat = gammas.ravel()
    step = max(1, _CHUNK // (prior.support_size**2 * quad.order))
    for i in range(0, flat.size, step):
        sl = slice(i, i + step)
        lse = logsumexp(_logits1(prior, flat[sl], quad), axis=-1)
        out.ravel()[sl] = np.einsum("gaq,a,q->g", lse, prior.probs, quad.weights)
    out[gammas == 0.0] = 0.0
    return out


def overlap1(prior: DiscretePrior, gammas, quad: GaussQuadrature) -> np.ndarray:
    """Overlap function E<x>^2 for an array of scalar SNRs (k = 1)."""
    gammas = np.asarray(gammas, dtype=float)
    x = prior.atoms1d()
    out = np.empty(gammas.shape)
    flat = gammas.ravel()
    step = max(1, _CHUNK // (prior.support_size**2 * quad.order))
    for i in range(0, flat.size, step):
        sl = slice(i, i + step)
        logits = _logits1(prior, flat[sl], quad)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        mean = (w @ x) / w.sum(axis=-1)
        out.ravel()[sl] = np.einsum(
            "gaq,a,q->g", mean**2, prior.probs, quad.weights
        )
    mm = float((prior.probs @ prior.atoms1d()) ** 2)
    out[gammas == 0.0] = mm
    return out


# ---------------------------------------------------------------------------
# General k >= 1 paths with matrix SNR.


def _shifts(prior, g: SNRMatrix):
    """Planted and quadratic parts of the log weights.

    Returns (planted_shift (S_planted, S), half (S,)) with
    planted_shift[a, x] = a' gamma x and half[x] = x' gamma x / 2.
    """
    gx = prior.atoms @ g.matrix  # (S, k)
    planted = gx @ prior.atoms.T  # (S, S): row = planted atom a
    half = 0.5 * np.einsum("sk,sk->s", gx, prior.atoms)
    return planted, half


def _planted_chunks(prior, n_nodes):
    step = max(1, _CHUNK // (n_nodes * prior.support_size))
    for i in range(0, prior.support_size, step):
        yield slice(i, i + step)


def psi_nd(prior: DiscretePrior, g: SNRMatrix, quad: GaussQuadrature) -> float:
    if np.all(g.matrix == 0.0):
        return 0.0
    nodes, weights = gaussian_nodes(prior.dim, quad)
    cross = nodes @ (g.sqrt @ prior.atoms.T)  # (N, S)
    planted, half = _shifts(prior, g)
    shift = planted - half + np.log(prior.probs)  # (S_planted, S)
    total = 0.0
    for sl in _planted_chunks(prior, nodes.shape[0]):
        lse = logsumexp(cross[None, :, :] + shift[sl, None, :], axis=-1)
        total += float(prior.probs[sl] @ (lse @ weights))
    return total


def overlap_nd(prior: DiscretePrior, g: SNRMatrix, quad: GaussQuadrature) -> np.ndarray:
    if np.all(g.matrix == 0.0):
        mean = prior.probs @ prior.atoms
        return np.outer(mean, mean)
    nodes, weights = gaussian_nodes(prior.dim, quad)
    cross = nodes @ (g.sqrt @ prior.atoms.T)
    planted, half = _shifts(prior, g)
    shift = planted - half + np.log(prior.probs)
    out = np.zeros((prior.dim, prior.dim))
    for sl in _planted_chunks(prior, nodes.shape[0]):
        logits = cross[None, :, :] + shift[sl, None, :]  # (A, N, S)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        mean = (w @ prior.atoms) / w.sum(axis=-1, keepdims=True)  # (A, N, k)
        out += np.einsum("a,n,ani,anj->ij", prior.probs[sl], weights, mean, mean)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Public API.


def psi(prior: DiscretePrior, gamma, quad: GaussQuadrature | None = None) -> float:
    """Free energy of the channel; psi(0) = 0."""
    quad = quad or gauss_hermite()
    g = as_snr(gamma, prior.dim)
    if g.dim != prior.dim:
        raise ValueError(f"gamma is {g.dim}x{g.dim} but prior has dim {prior.dim}")
    if prior.dim == 1:
        return float(psi1(prior, np.array([g.matrix[0, 0]]), quad)[0])
    return psi_nd(prior, g, quad)


def overlap_F(prior: DiscretePrior, gamma, quad: GaussQuadrature | None = None) -> np.ndarray:
    """Overlap matrix E[<x><x>'], symmetric with 0 <= F <= E[XX'] (Loewner)."""
    quad = quad or gauss_hermite()
    g = as_snr(gamma, prior.dim)
    if g.dim != prior.dim:
        raise ValueError(f"gamma is {g.dim}x{g.dim} but prior has dim {prior.dim}")
    if prior.dim == 1:
        return overlap1(prior, np.array([g.matrix[0, 0]]), quad).reshape(1, 1)
    return overlap_nd(prior, g, quad)


def _posterior_weights(prior, g: SNRMatrix, y: np.ndarray) -> np.ndarray:
    """Normalized posterior weights, shape (N, S), via log-sum-exp."""
    logits = y @ (g.sqrt @ prior.atoms.T)
    logits -= 0.5 * np.einsum("sk,sk->s", prior.atoms @ g.matrix, prior.atoms)
    logits += np.log(prior.probs)
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def denoiser(prior: DiscretePrior, gamma, y) -> np.ndarray:
    """Posterior mean E[X | Y = y] for the channel Y = gamma^{1/2} X + Z.

    `y` may be a single k-vector or an (N, k) batch (for k = 1, a scalar or
    a length-N vector); the output matches.  Never NaN: weights are formed
    in log-space, and the result lies in the convex hull of the atoms.
    """
    g = as_snr(gamma, prior.dim)
    y_arr = np.asarray(y, dtype=float)
    scalar_in = y_arr.ndim == 0
    if prior.dim == 1:
        y2 = y_arr.reshape(-1, 1)
    else:
        y2 = y_arr.reshape(-1, prior.dim)
    probs = _posterior_weights(prior, g, y2)
    mean = probs @ prior.atoms
    if prior.dim == 1:
        mean = mean[:, 0]
        return float(mean[0]) if scalar_in else mean.reshape(y_arr.shape)
    return mean[0] if y_arr.ndim == 1 else mean


def denoiser_derivative(prior: DiscretePrior, gamma, y) -> np.ndarray:
    """Jacobian of the denoiser in y: posterior covariance times gamma^{1/2}."""
    g = as_snr(gamma, prior.dim)
    y_arr = np.asarray(y, dtype=float)
    scalar_in = y_arr.ndim == 0
    if prior.dim == 1:
        y2 = y_arr.reshape(-1, 1)
    else:
        y2 = y_arr.reshape(-1, prior.dim)
    probs = _posterior_weights(prior, g, y2)
    mean = probs @ prior.atoms  # (N, k)
    second = np.einsum("ns,si,sj->nij", probs, prior.atoms, prior.atoms)
    cov = second - np.einsum("ni,nj->nij", mean, mean)
    jac = cov @ g.sqrt
    if prior.dim == 1:
        jac = jac[:, 0, 0]
        return float(jac[0]) if scalar_in else jac.reshape(y_arr.shape)
    return jac[0] if y_arr.ndim == 1 else jac


def posterior_variance(prior: DiscretePrior, gamma, y) -> np.ndarray:
    """Posterior variance of X given y; k = 1 only (used by the AMP loop)."""
    if prior.dim != 1:
        raise ValueError("posterior_variance is k = 1 only")
    g = as_snr(gamma, 1)
    y2 = np.asarray(y, dtype=float).reshape(-1, 1)
    probs = _posterior_weights(prior, g, y2)
    x = prior.atoms1d()
    mean = probs @ x
    return probs @ x**2 - mean**2


def channel_mmse(prior: DiscretePrior, gamma, quad: GaussQuadrature | None = None) -> float:
    """Scalar-channel MMSE: E[X^2] - trace F(gamma)."""
    second = moments(prior).second_moment
    return float(np.trace(second) - np.trace(overlap_F(prior, gamma, quad)))

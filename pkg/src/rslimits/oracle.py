"""Exact finite-n Bayesian computations by full posterior enumeration.

For small n, m the posterior over (u, v) in S_u^n x S_v^m is enumerated
exactly in log-space, giving per-sample posterior means, partition
functions and replica moments with no inner Monte Carlo error.  Outer
Monte Carlo over the planted signal and noise then estimates MMSE_n, the
free energy F_n = (1/n) E log Z_n, the mutual information, and the
structural identities that the asymptotic formulas rest on:

  Nishimori   E<uv>^2 = E<uv UV>
  I-MMSE      dF_n/dlam = (1/2n^2) E<(u . U)(v . V)>   (unnormalized dots)

Each Monte Carlo sample draws from its own seeded stream [seed, index], so
estimates are deterministic and independent of evaluation order/schedule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .priors import DiscretePrior, moments

TABLE_CAP = 1_000_000


@dataclass(frozen=True)
class PosteriorTable:
    """Exact posterior over the configuration grid.

    Configurations are enumerated in odometer order over atom indices:
    u_configs[a] is the a-th point of S_u^n, v_configs[b] of S_v^m, and
    log_weights[a, b] the joint unnormalized log posterior weight.
    """

    u_configs: np.ndarray
    v_configs: np.ndarray
    log_weights: np.ndarray
    log_Z: float

    @property
    def size(self) -> int:
        return self.log_weights.size

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_Z)

    def posterior_mean_uv(self) -> np.ndarray:
        """E[u_i v_j | Y] for all (i, j), shape (n, m)."""
        p = self.probabilities()
        return self.u_configs.T @ p @ self.v_configs


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    std_error: float
    num_samples: int
    seed: int

    def to_dict(self, **params) -> dict:
        return {
            "estimate": self.value,
            "std_error": self.std_error,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "params": params,
        }


def _configs(prior: DiscretePrior, count: int) -> np.ndarray:
    """All |S|^count configurations as a (|S|^count, count) array (k = 1)."""
    atoms = prior.atoms1d()
    return np.array(list(itertools.product(atoms, repeat=count)), dtype=float).reshape(
        -1, count
    )


def _log_prior(prior: DiscretePrior, configs_idx_count: int) -> np.ndarray:
    logp = np.log(prior.probs)
    grids = np.meshgrid(*([logp] * configs_idx_count), indexing="ij")
    return sum(g.ravel() for g in grids)


def _check_cap(prior_u, prior_v, n, m, cap=TABLE_CAP):
    size = prior_u.support_size**n * prior_v.support_size**m
    if size > cap:
        raise ValueError(f"posterior table size {size} exceeds cap {cap}")
    return size


def _log_weights(prior_u, prior_v, n, lam, Y, u_configs, v_configs, lpu, lpv):
    """Unnormalized log posterior weights over the configuration grid."""
    cross = np.sqrt(lam / n) * (u_configs @ Y @ v_configs.T)
    quad = (0.5 * lam / n) * np.outer(
        (u_configs**2).sum(axis=1), (v_configs**2).sum(axis=1)
    )
    return lpu[:, None] + lpv[None, :] + cross - quad


def exact_posterior(instance) -> PosteriorTable:
    """Enumerate the posterior of an Instance exactly (k = 1)."""
    pu, pv = instance.prior_u, instance.prior_v
    if pu is None or pv is None:
        raise ValueError("instance carries no priors")
    if pu.dim != 1 or pv.dim != 1:
        raise ValueError("exact enumeration implements k = 1")
    _check_cap(pu, pv, instance.n, instance.m)
    u_configs = _configs(pu, instance.n)
    v_configs = _configs(pv, instance.m)
    lpu = _log_prior(pu, instance.n)
    lpv = _log_prior(pv, instance.m)
    lw = _log_weights(
        pu, pv, instance.n, instance.lam, instance.Y, u_configs, v_configs, lpu, lpv
    )
    return PosteriorTable(
        u_configs=u_configs,
        v_configs=v_configs,
        log_weights=lw,
        log_Z=float(logsumexp(lw)),
    )


# ---------------------------------------------------------------------------
# Seeded sample streams.


def _draw(prior, count, rng):
    idx = rng.choice(prior.support_size, size=count, p=prior.probs)
    return prior.atoms1d()[idx]


def _sample(prior_u, prior_v, n, m, seed, index):
    rng = np.random.default_rng([seed, index])
    U = _draw(prior_u, n, rng)
    V = _draw(prior_v, m, rng)
    Z = rng.standard_normal((n, m))
    return U, V, Z


def _posterior_probs(prior_u, prior_v, n, lam, Y, ctx):
    u_configs, v_configs, lpu, lpv = ctx
    lw = _log_weights(prior_u, prior_v, n, lam, Y, u_configs, v_configs, lpu, lpv)
    log_z = logsumexp(lw)
    return np.exp(lw - log_z), float(log_z)


def _context(prior_u, prior_v, n, m):
    _check_cap(prior_u, prior_v, n, m)
    return (
        _configs(prior_u, n),
        _configs(prior_v, m),
        _log_prior(prior_u, n),
        _log_prior(prior_v, m),
    )


def _estimate(values, num_samples, seed) -> OracleEstimate:
    values = np.asarray(values, dtype=float)
    return OracleEstimate(
        value=float(values.mean()),
        std_error=float(values.std(ddof=1) / np.sqrt(len(values)))
        if len(values) > 1
        else 0.0,
        num_samples=num_samples,
        seed=seed,
    )


def mmse_n(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    n: int,
    m: int,
    lam: float,
    num_samples: int = 10_000,
    seed: int = 0,
) -> OracleEstimate:
    """Monte Carlo estimate of MMSE_n; the inner posterior mean is exact."""
    ctx = _context(prior_u, prior_v, n, m)
    u_configs, v_configs = ctx[0], ctx[1]
    vals = np.empty(num_samples)
    for s in range(num_samples):
        U, V, Z = _sample(prior_u, prior_v, n, m, seed, s)
        Y = np.sqrt(lam / n) * np.outer(U, V) + Z
        p, _ = _posterior_probs(prior_u, prior_v, n, lam, Y, ctx)
        M = u_configs.T @ p @ v_configs
        vals[s] = ((np.outer(U, V) - M) ** 2).mean()
    return _estimate(vals, num_samples, seed)


def free_energy_n(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    n: int,
    m: int,
    lam: float,
    num_samples: int = 10_000,
    seed: int = 0,
) -> OracleEstimate:
    """Monte Carlo average of (1/n) log Z_n."""
    ctx = _context(prior_u, prior_v, n, m)
    vals = np.empty(num_samples)
    for s in range(num_samples):
        U, V, Z = _sample(prior_u, prior_v, n, m, seed, s)
        Y = np.sqrt(lam / n) * np.outer(U, V) + Z
        _, log_z = _posterior_probs(prior_u, prior_v, n, lam, Y, ctx)
        vals[s] = log_z / n
    return _estimate(vals, num_samples, seed)


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float
    difference: float
    std_error: float
    num_samples: int
    seed: int

    def sigmas(self) -> float:
        return abs(self.difference) / self.std_error if self.std_error else np.inf

    def to_dict(self, **params) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "difference": self.difference,
            "std_error": self.std_error,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "params": params,
        }


def nishimori_check(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    n: int,
    m: int,
    lam: float,
    num_samples: int = 10_000,
    seed: int = 0,
    negative_control: bool = False,
) -> IdentityReport:
    """Paired test of E<uv>^2 = E<uv UV> on the enumerated posterior.

    With negative_control=True the planted signal on the right-hand side is
    replaced by an independent draw, which must break the identity.
    """
    ctx = _context(prior_u, prior_v, n, m)
    u_configs, v_configs = ctx[0], ctx[1]
    lhs = np.empty(num_samples)
    rhs = np.empty(num_samples)
    for s in range(num_samples):
        U, V, Z = _sample(prior_u, prior_v, n, m, seed, s)
        Y = np.sqrt(lam / n) * np.outer(U, V) + Z
        p, _ = _posterior_probs(prior_u, prior_v, n, lam, Y, ctx)
        M = u_configs.T @ p @ v_configs
        if negative_control:
            rng = np.random.default_rng([seed, s, 1])
            U = _draw(prior_u, n, rng)
            V = _draw(prior_v, m, rng)
        lhs[s] = (M**2).mean()
        rhs[s] = (M * np.outer(U, V)).mean()
    diff = lhs - rhs
    est = _estimate(diff, num_samples, seed)
    return IdentityReport(
        lhs=float(lhs.mean()),
        rhs=float(rhs.mean()),
        difference=est.value,
        std_error=est.std_error,
        num_samples=num_samples,
        seed=seed,
    )


def i_mmse_check(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    n: int,
    m: int,
    lam: float,
    h: float | None = None,
    num_samples: int = 10_000,
    seed: int = 0,
) -> IdentityReport:
    """Finite-difference dF_n/dlam against the overlap form, paired samples.

    Common random numbers across lam +/- h: each sample reuses its (U, V, Z)
    for both perturbed observations, so the difference is estimated at the
    per-sample level.  lhs is the centered finite difference, rhs the exact
    posterior overlap expression (1/2n^2) <(u . U)(v . V)>.
    """
    if h is None:
        h = 0.01 * lam
    if not 0.0 < h < lam:
        raise ValueError(f"need 0 < h < lam, got h={h}, lam={lam}")
    ctx = _context(prior_u, prior_v, n, m)
    u_configs, v_configs = ctx[0], ctx[1]
    fd = np.empty(num_samples)
    ov = np.empty(num_samples)
    for s in range(num_samples):
        U, V, Z = _sample(prior_u, prior_v, n, m, seed, s)
        outer = np.outer(U, V)
        log_zs = []
        for lam_s in (lam + h, lam - h):
            Y = np.sqrt(lam_s / n) * outer + Z
            _, log_z = _posterior_probs(prior_u, prior_v, n, lam_s, Y, ctx)
            log_zs.append(log_z)
        fd[s] = (log_zs[0] - log_zs[1]) / (2.0 * h * n)
        Y = np.sqrt(lam / n) * outer + Z
        p, _ = _posterior_probs(prior_u, prior_v, n, lam, Y, ctx)
        dots_u = u_configs @ U
        dots_v = v_configs @ V
        ov[s] = float(dots_u @ p @ dots_v) / (2.0 * n**2)
    diff = fd - ov
    est = _estimate(diff, num_samples, seed)
    return IdentityReport(
        lhs=float(fd.mean()),
        rhs=float(ov.mean()),
        difference=est.value,
        std_error=est.std_error,
        num_samples=num_samples,
        seed=seed,
    )


def mutual_information_n(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    n: int,
    m: int,
    lam: float,
    num_samples: int = 10_000,
    seed: int = 0,
) -> OracleEstimate:
    """(1/n) I((U,V); Y) = (1/n) E[H_n(U,V)] - F_n.

    The energy term is exact for product priors: (lam m / 2n) E[U^2] E[V^2]
    (for n = m this is the two-term split lam/2n E[U^2V^2] +
    lam(n-1)/2n E[U^2]E[V^2] with the cross moment factorizing).
    """
    eu2 = float(moments(prior_u).second_moment[0, 0])
    ev2 = float(moments(prior_v).second_moment[0, 0])
    energy = 0.5 * lam * m / n * eu2 * ev2
    fe = free_energy_n(prior_u, prior_v, n, m, lam, num_samples, seed)
    return OracleEstimate(
        value=energy - fe.value,
        std_error=fe.std_error,
        num_samples=num_samples,
        seed=seed,
    )

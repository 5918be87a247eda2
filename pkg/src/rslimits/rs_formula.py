"""Replica-symmetric potential, state evolution, and the limit solver.

Conventions (rank k, aspect ratio alpha = m/n):

  potential   F(lam, alpha, q1, q2) = psi_U(lam*alpha*q1) + alpha*psi_V(lam*q2)
                                      - (lam*alpha/2) Tr[q1 q2]
  fixed points  Gamma(lam, alpha) = {(q1, q2) PSD : q2 = F_U(lam*alpha*q1),
                                                    q1 = F_V(lam*q2)}

q1 tracks the V-side overlap, q2 the U-side overlap.  The limiting free
energy is the max of the potential over Gamma; from it follow the mutual
information and MMSE limits and the threshold lambda_c (the signal level
below which the dummy estimator is optimal).

Fixed points are found by damped iteration from a spread of starts; for
k = 1 a sign-change scan of h(q1) = F_V(lam*F_U(lam*alpha*q1)) - q1 with
bisection refinement makes the enumeration exhaustive at grid resolution
(and catches the unstable points damped iteration cannot reach).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .priors import DiscretePrior, moments
from .scalar_channel import (
    GaussQuadrature,
    gauss_hermite,
    overlap1,
    overlap_nd,
    psi1,
    psi_nd,
    as_snr,
)


class BracketError(ValueError):
    """Threshold bracket does not straddle the crossing."""


class NumericalError(RuntimeError):
    """A numerical routine failed to produce a usable result."""


@dataclass(frozen=True)
class FixedPoint:
    """Candidate element of Gamma with its residual and potential value."""

    q1: np.ndarray
    q2: np.ndarray
    residual: float
    potential: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RSSolution:
    lam: float
    alpha: float
    free_energy: float
    mutual_information: float
    mmse: float
    dmse: float
    Q: float
    maximizers: list[FixedPoint]
    fixed_points: list[FixedPoint]
    degenerate: bool
    warning: str | None = None


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    damping: float = 0.5
    max_iter: int = 10_000
    quad_order: int = 121
    grid_points: int = 32       # seeded damped runs over q1 in [0, E V^2] (k=1)
    scan_points: int = 257      # sign-change scan resolution for h (k=1)
    dedup_tol: float = 1e-6
    tie_tol: float = 1e-9
    extra_inits: tuple = ()

    def quad(self) -> GaussQuadrature:
        return gauss_hermite(self.quad_order)


def project_psd(m: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Clip negative eigenvalues; damped updates drift below PSD by rounding."""
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() >= floor:
        return m
    return (v * np.clip(w, floor, None)) @ v.T


def _as_q(value, k: int) -> np.ndarray:
    q = np.asarray(value, dtype=float)
    if q.ndim == 0:
        q = q * np.eye(k) if k > 1 else q.reshape(1, 1)
    if q.shape != (k, k):
        raise ValueError(f"overlap must be {k}x{k}, got {q.shape}")
    return project_psd(q)


def dmse(prior_u: DiscretePrior, prior_v: DiscretePrior) -> float:
    """MSE of the best estimator that ignores the data."""
    mu, mv = moments(prior_u), moments(prior_v)
    full = np.trace(mu.second_moment @ mv.second_moment)
    mean_part = np.trace(
        np.outer(mu.mean, mu.mean) @ np.outer(mv.mean, mv.mean)
    )
    return float(full - mean_part)


def _second_trace(prior_u, prior_v) -> float:
    return float(
        np.trace(moments(prior_u).second_moment @ moments(prior_v).second_moment)
    )


def _mean_trace(prior_u, prior_v) -> float:
    mu, mv = moments(prior_u), moments(prior_v)
    return float(np.trace(np.outer(mu.mean, mu.mean) @ np.outer(mv.mean, mv.mean)))


# ---------------------------------------------------------------------------
# Potential.


def _psi_of(prior, gamma_mat, quad) -> float:
    if prior.dim == 1:
        return float(psi1(prior, np.array([gamma_mat[0, 0]]), quad)[0])
    return psi_nd(prior, as_snr(gamma_mat), quad)


def _overlap_of(prior, gamma_mat, quad) -> np.ndarray:
    if prior.dim == 1:
        return overlap1(prior, np.array([gamma_mat[0, 0]]), quad).reshape(1, 1)
    return overlap_nd(prior, as_snr(gamma_mat), quad)


def rs_potential(
    lam: float,
    alpha: float,
    q1,
    q2,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    quad: GaussQuadrature | None = None,
) -> float:
    """Value of the variational potential at overlap pair (q1, q2)."""
    if prior_u.dim != prior_v.dim:
        raise ValueError("prior_u and prior_v must share the same dim")
    k = prior_u.dim
    q1 = _as_q(q1, k)
    q2 = _as_q(q2, k)
    quad = quad or gauss_hermite()
    return (
        _psi_of(prior_u, lam * alpha * q1, quad)
        + alpha * _psi_of(prior_v, lam * q2, quad)
        - 0.5 * lam * alpha * float(np.trace(q1 @ q2))
    )


# ---------------------------------------------------------------------------
# State evolution.


def state_evolution(
    lam: float,
    alpha: float,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    init,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    quad: GaussQuadrature | None = None,
):
    """Damped alternating iteration of the overlap fixed-point equations.

    Updates q2 <- (1-d) F_U(lam*alpha*q1) + d q2, then q1 from the fresh q2,
    until the residual max(|q2 - F_U|, |q1 - F_V|) drops below tol.
    Non-convergence is reported through converged=False, not an exception.

    Returns (trajectory, FixedPoint); the trajectory lists (q1, q2) per sweep.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    k = prior_u.dim
    quad = quad or gauss_hermite()
    q1 = _as_q(init[0], k)
    q2 = _as_q(init[1], k)
    trajectory = [(q1.copy(), q2.copy())]
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # Residual is checked at the state after the q2 half-update, where
        # both components fall out of the update evaluations for free.
        fu = _overlap_of(prior_u, lam * alpha * q1, quad)
        gap2 = float(np.abs(q2 - fu).max())
        q2 = project_psd((1.0 - damping) * fu + damping * q2)
        fv = _overlap_of(prior_v, lam * q2, quad)
        gap1 = float(np.abs(q1 - fv).max())
        residual = max(damping * gap2, gap1)
        if residual <= tol:
            trajectory.append((q1.copy(), q2.copy()))
            break
        q1 = project_psd((1.0 - damping) * fv + damping * q1)
        trajectory.append((q1.copy(), q2.copy()))
    potential = rs_potential(lam, alpha, q1, q2, prior_u, prior_v, quad)
    fp = FixedPoint(
        q1=q1,
        q2=q2,
        residual=residual,
        potential=potential,
        iterations=iterations,
        converged=residual <= tol,
    )
    return trajectory, fp


# ---------------------------------------------------------------------------
# Fixed-point enumeration.


def _default_inits(lam, alpha, prior_u, prior_v, cfg, quad):
    k = prior_u.dim
    mu, mv = moments(prior_u), moments(prior_v)
    inits = []
    if np.abs(mu.mean).max() < 1e-12 and np.abs(mv.mean).max() < 1e-12:
        inits.append((np.zeros((k, k)), np.zeros((k, k))))
    eps = 1e-3
    inits.append((eps * np.eye(k), eps * np.eye(k)))
    inits.append((mv.second_moment.copy(), mu.second_moment.copy()))
    inits.append((np.outer(mv.mean, mv.mean), np.outer(mu.mean, mu.mean)))
    for q1, q2 in cfg.extra_inits:
        inits.append((_as_q(q1, k), _as_q(q2, k)))
    if k == 1:
        top = mv.second_moment[0, 0]
        for g in np.linspace(0.0, top, cfg.grid_points):
            q2 = overlap1(prior_u, np.array([lam * alpha * g]), quad)[0]
            inits.append((np.array([[g]]), np.array([[q2]])))
    return inits


def _iterate_batch1(lam, alpha, prior_u, prior_v, q1s, q2s, cfg, quad):
    """Damped iteration of a whole batch of scalar (q1, q2) states at once.

    The residual is read off the state after each q2 half-update, costing no
    extra overlap evaluations; converged states drop out of the batch.
    """
    q1s = np.asarray(q1s, dtype=float).copy()
    q2s = np.asarray(q2s, dtype=float).copy()
    d = cfg.damping
    # The scan enumerates all k=1 fixed points at grid resolution, and the
    # monotone dynamics cannot cross one, so seeded runs only ever settle on
    # scan roots; a few hundred sweeps suffice to confirm the fast ones and
    # near-critical crawlers are redundant rather than informative.
    budget = min(cfg.max_iter, 400)
    active = np.ones(q1s.shape, dtype=bool)
    res = np.full(q1s.shape, np.inf)
    iters = np.zeros(q1s.shape, dtype=int)
    for _ in range(budget):
        idx = np.flatnonzero(active)
        q1a, q2a = q1s[idx], q2s[idx]
        fu = overlap1(prior_u, lam * alpha * q1a, quad)
        gap2 = np.abs(q2a - fu)
        q2a = np.maximum((1.0 - d) * fu + d * q2a, 0.0)
        fv = overlap1(prior_v, lam * q2a, quad)
        gap1 = np.abs(q1a - fv)
        r = np.maximum(d * gap2, gap1)
        done = r <= cfg.tol
        q1a = np.where(done, q1a, np.maximum((1.0 - d) * fv + d * q1a, 0.0))
        q1s[idx], q2s[idx] = q1a, q2a
        res[idx] = r
        iters[idx] += 1
        active[idx[done]] = False
        if not active.any():
            break
    return q1s, q2s, res, iters


def _h1(lam, alpha, prior_u, prior_v, q1s, quad):
    """h(q1) = F_V(lam * F_U(lam*alpha*q1)) - q1, vectorized (k = 1)."""
    q1s = np.asarray(q1s, dtype=float)
    fu = overlap1(prior_u, lam * alpha * q1s, quad)
    return overlap1(prior_v, lam * fu, quad) - q1s


def _scan_roots1(lam, alpha, prior_u, prior_v, cfg, quad):
    """Bisection on sign changes of h over [0, E V^2].

    The grid is a uniform scan plus geometric points near zero, so the tiny
    positive hump just above a second-order transition is not stepped over.
    """
    top = moments(prior_v).second_moment[0, 0]
    grid = np.unique(
        np.concatenate(
            [
                np.linspace(0.0, top, cfg.scan_points),
                top * np.logspace(-8, -1, 15),
            ]
        )
    )
    h = _h1(lam, alpha, prior_u, prior_v, grid, quad)
    roots = []
    sign_change = np.flatnonzero(np.sign(h[:-1]) * np.sign(h[1:]) < 0)
    for i in sign_change:
        lo, hi = grid[i], grid[i + 1]
        flo = h[i]
        steps = 0
        for steps in range(1, 80):
            mid = 0.5 * (lo + hi)
            fm = _h1(lam, alpha, prior_u, prior_v, np.array([mid]), quad)[0]
            if flo * fm <= 0.0:
                hi = mid
            else:
                lo, flo = mid, fm
            if hi - lo < 1e-14 * max(1.0, top):
                break
        roots.append((0.5 * (lo + hi), steps))
    return roots


def _dedup(points, tol):
    kept = []
    for p in points:
        match = None
        for i, q in enumerate(kept):
            dist = max(
                float(np.abs(p.q1 - q.q1).max()), float(np.abs(p.q2 - q.q2).max())
            )
            if dist <= tol:
                match = i
                break
        if match is None:
            kept.append(p)
        elif p.residual < kept[match].residual:
            kept[match] = p
    return kept


def find_fixed_points(
    lam: float,
    alpha: float,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    config: SolverConfig | None = None,
) -> list[FixedPoint]:
    """Enumerate Gamma(lam, alpha) by multi-start iteration (+ scan for k=1).

    Returns converged points, deduplicated at distance config.dedup_tol and
    sorted by potential (largest first).  Raises NumericalError if nothing
    converges.
    """
    cfg = config or SolverConfig()
    quad = cfg.quad()
    k = prior_u.dim
    if prior_v.dim != k:
        raise ValueError("prior_u and prior_v must share the same dim")
    inits = _default_inits(lam, alpha, prior_u, prior_v, cfg, quad)
    found = []
    best_residual = np.inf
    if k == 1:
        q1s = np.array([q1[0, 0] for q1, _ in inits])
        q2s = np.array([q2[0, 0] for _, q2 in inits])
        q1s, q2s, res, iters = _iterate_batch1(
            lam, alpha, prior_u, prior_v, q1s, q2s, cfg, quad
        )
        best_residual = float(res.min())
        for q1, q2, r, it in zip(q1s, q2s, res, iters):
            if r <= cfg.tol:
                found.append((np.array([[q1]]), np.array([[q2]]), r, int(it)))
        for root, steps in _scan_roots1(lam, alpha, prior_u, prior_v, cfg, quad):
            q1 = np.array([root])
            q2 = overlap1(prior_u, lam * alpha * q1, quad)
            fv = overlap1(prior_v, lam * q2, quad)
            r = float(np.abs(q1 - fv).max())
            if r <= cfg.tol:
                found.append((q1.reshape(1, 1), q2.reshape(1, 1), r, steps))
            best_residual = min(best_residual, r)
    else:
        for init in inits:
            _, fp = state_evolution(
                lam, alpha, prior_u, prior_v, init,
                damping=cfg.damping, tol=cfg.tol, max_iter=cfg.max_iter,
                quad=quad,
            )
            best_residual = min(best_residual, fp.residual)
            if fp.converged:
                found.append((fp.q1, fp.q2, fp.residual, fp.iterations))
    if not found:
        raise NumericalError(
            f"no fixed point converged at lam={lam}, alpha={alpha} "
            f"(best residual {best_residual:.3e}, tol {cfg.tol:.1e})"
        )
    points = [
        FixedPoint(
            q1=q1,
            q2=q2,
            residual=r,
            potential=rs_potential(lam, alpha, q1, q2, prior_u, prior_v, quad),
            iterations=it,
            converged=True,
        )
        for q1, q2, r, it in found
    ]
    points = _dedup(points, cfg.dedup_tol)
    points.sort(key=lambda p: -p.potential)
    return points


# ---------------------------------------------------------------------------
# The solver.


def solve(
    lam: float,
    alpha: float,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    config: SolverConfig | None = None,
) -> RSSolution:
    """Limiting free energy, mutual information and MMSE at signal level lam.

    free energy  = max of the potential over the fixed points found,
    mutual info  = (lam*alpha/2) Tr[E UU' E VV'] - free energy,
    mmse         = Tr[E UU' E VV'] - Tr[q1* q2*].

    If two fixed points tie in potential within config.tie_tol the solution
    is flagged degenerate and Q is taken from the larger-trace point.
    """
    cfg = config or SolverConfig()
    points = find_fixed_points(lam, alpha, prior_u, prior_v, cfg)
    best = points[0].potential
    maximizers = [p for p in points if best - p.potential <= cfg.tie_tol]
    degenerate = len(maximizers) > 1
    warning = None
    if degenerate:
        maximizers.sort(key=lambda p: -float(np.trace(p.q1 @ p.q2)))
        warning = (
            f"{len(maximizers)} fixed points tie in potential within "
            f"{cfg.tie_tol:.1e} at lam={lam}; using the larger-trace point"
        )
        warnings.warn(warning, stacklevel=2)
    top = maximizers[0]
    second_trace = _second_trace(prior_u, prior_v)
    q_value = float(np.trace(top.q1 @ top.q2))
    mmse = second_trace - q_value
    if -1e-8 < mmse < 0.0:  # quadrature rounding at saturated overlaps
        mmse = 0.0
    return RSSolution(
        lam=float(lam),
        alpha=float(alpha),
        free_energy=best,
        mutual_information=0.5 * lam * alpha * second_trace - best,
        mmse=mmse,
        dmse=dmse(prior_u, prior_v),
        Q=q_value,
        maximizers=maximizers,
        fixed_points=points,
        degenerate=degenerate,
        warning=warning,
    )


def lambda_c(
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    alpha: float = 1.0,
    bracket: tuple[float, float] = (0.05, 10.0),
    tol: float = 1e-3,
    config: SolverConfig | None = None,
) -> float:
    """Information-theoretic threshold by bisection on the overlap indicator.

    The indicator [Q(lam) > mean-product trace + 1e-8] is monotone in lam
    (Q is non-decreasing), which justifies bisection.  Degenerate priors with
    dmse = 0, and priors whose overlap exceeds the mean product for every
    lam probed, return 0 by the empty-set convention.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 <= lo < hi:
        raise ValueError(f"need 0 <= lo < hi, got bracket {bracket}")
    if dmse(prior_u, prior_v) <= 1e-14:
        return 0.0
    cfg = config or SolverConfig()
    threshold = _mean_trace(prior_u, prior_v) + 1e-8

    def indicator(lam: float) -> bool:
        return solve(lam, alpha, prior_u, prior_v, cfg).Q > threshold

    q_lo, q_hi = indicator(lo), indicator(hi)
    if not q_hi:
        raise BracketError(
            f"indicator is False on the whole bracket {bracket}: "
            f"Q stays at the mean-product level up to lam={hi}"
        )
    if q_lo:
        tiny = max(lo * 1e-3, 1e-8)
        if indicator(tiny):
            return 0.0
        lo, hi = tiny, lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if indicator(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Min-max cross-check.


@dataclass(frozen=True)
class GridSpec:
    n1: int = 400
    n2: int = 400
    q2_margin: float = 0.5


@dataclass(frozen=True)
class MinMaxReport:
    lam: float
    alpha: float
    sup_inf: float
    sup_gamma: float
    difference: float
    argmax_q1: np.ndarray
    grid_shape: tuple


def minmax_check(
    lam: float,
    alpha: float,
    prior_u: DiscretePrior,
    prior_v: DiscretePrior,
    grid_spec: GridSpec | None = None,
    config: SolverConfig | None = None,
) -> MinMaxReport:
    """Compare grid sup_{q1} inf_{q2} of the potential against sup over Gamma.

    k = 1: dense grid on [0, E V^2] x [0, E U^2 + margin].  k = 2: coarse
    grid over diagonal overlap pairs (adequate for product priors, heuristic
    otherwise).  Higher ranks are rejected.
    """
    spec = grid_spec or GridSpec()
    cfg = config or SolverConfig()
    quad = cfg.quad()
    k = prior_u.dim
    sup_gamma = solve(lam, alpha, prior_u, prior_v, cfg).free_energy
    ev2 = moments(prior_v).second_moment
    eu2 = moments(prior_u).second_moment
    if k == 1:
        q1 = np.linspace(0.0, ev2[0, 0], spec.n1)
        q2 = np.linspace(0.0, eu2[0, 0] + spec.q2_margin, spec.n2)
        psi_u = psi1(prior_u, lam * alpha * q1, quad)
        psi_v = psi1(prior_v, lam * q2, quad)
        pot = (
            psi_u[:, None]
            + alpha * psi_v[None, :]
            - 0.5 * lam * alpha * np.outer(q1, q2)
        )
        inner = pot.min(axis=1)
        i = int(inner.argmax())
        sup_inf = float(inner[i])
        argmax = np.array([[q1[i]]])
        shape = (spec.n1, spec.n2)
    elif k == 2:
        n1 = min(spec.n1, 17)
        n2 = min(spec.n2, 17)
        # the coarse diagonal grid dominates the error budget here, so a
        # moderate per-dimension order keeps the scan affordable
        grid_quad = gauss_hermite(min(cfg.quad_order, 61))
        g1 = [np.linspace(0.0, ev2[i, i], n1) for i in range(2)]
        g2 = [np.linspace(0.0, eu2[i, i] + spec.q2_margin, n2) for i in range(2)]
        q1d = np.stack([g.ravel() for g in np.meshgrid(*g1, indexing="ij")], 1)
        q2d = np.stack([g.ravel() for g in np.meshgrid(*g2, indexing="ij")], 1)
        psi_u = np.array(
            [psi_nd(prior_u, as_snr(lam * alpha * np.diag(d)), grid_quad) for d in q1d]
        )
        psi_v = np.array(
            [psi_nd(prior_v, as_snr(lam * np.diag(d)), grid_quad) for d in q2d]
        )
        pot = (
            psi_u[:, None]
            + alpha * psi_v[None, :]
            - 0.5 * lam * alpha * (q1d @ q2d.T)
        )
        inner = pot.min(axis=1)
        i = int(inner.argmax())
        sup_inf = float(inner[i])
        argmax = np.diag(q1d[i])
        shape = (n1 * n1, n2 * n2)
    else:
        raise ValueError("minmax_check supports k = 1 (dense) or k = 2 (coarse)")
    return MinMaxReport(
        lam=float(lam),
        alpha=float(alpha),
        sup_inf=sup_inf,
        sup_gamma=sup_gamma,
        difference=sup_inf - sup_gamma,
        argmax_q1=argmax,
        grid_shape=shape,
    )

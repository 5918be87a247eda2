"""Finite-support priors on R^k and their moments.

A prior is a list of distinct atoms with strictly positive probabilities
summing to one.  Atoms live in R^k; the scalar theory uses k = 1 and the
multidimensional extension uses k > 1 (typically built with
:func:`product_prior`).  Continuous priors enter only through explicit
discretizations, e.g. :func:`gauss_hermite_prior` for a standard normal.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

DEFAULT_SUPPORT_CAP = 10_000

_PROB_TOL = 1e-12
_DEDUP_TOL = 1e-12


@dataclass(frozen=True)
class DiscretePrior:
    """Finite-support distribution on R^k.

    atoms: (S, k) array of pairwise-distinct support points.
    probs: (S,) array of strictly positive weights summing to 1.
    """

    atoms: np.ndarray
    probs: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        atoms = np.atleast_1d(np.asarray(self.atoms, dtype=float))
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise ValueError("atoms must be a non-empty (S, k) array")
        probs = np.asarray(self.probs, dtype=float).ravel()
        if probs.shape[0] != atoms.shape[0]:
            raise ValueError(
                f"got {atoms.shape[0]} atoms but {probs.shape[0]} probabilities"
            )
        if not np.all(np.isfinite(atoms)):
            raise ValueError("atom coordinates must be finite")
        if np.any(probs <= 0.0):
            raise ValueError("probabilities must be strictly positive")
        if abs(probs.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        # Duplicate atoms are rejected (not merged) so provenance stays explicit.
        order = np.lexsort(atoms.T[::-1])
        diffs = np.abs(np.diff(atoms[order], axis=0)).max(axis=1, initial=0.0)
        if atoms.shape[0] > 1 and diffs.min() <= _DEDUP_TOL:
            raise ValueError("atoms are not pairwise distinct")
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "dim", atoms.shape[1])

    @property
    def support_size(self) -> int:
        return self.atoms.shape[0]

    @property
    def atom_bound(self) -> float:
        """Smallest K0 with all atom coordinates in [-K0, K0]."""
        return float(np.abs(self.atoms).max())

    def atoms1d(self) -> np.ndarray:
        """Support as a flat vector; only valid for k = 1."""
        if self.dim != 1:
            raise ValueError(f"prior has dim {self.dim}, expected 1")
        return self.atoms[:, 0]


@dataclass(frozen=True)
class Moments:
    """First and second moments of a prior: mean, E[XX^T], covariance."""

    mean: np.ndarray
    second_moment: np.ndarray
    covariance: np.ndarray


def moments(prior: DiscretePrior) -> Moments:
    """Exact moments as weighted sums over the atoms."""
    mean = prior.probs @ prior.atoms
    second = np.einsum("s,si,sj->ij", prior.probs, prior.atoms, prior.atoms)
    second = 0.5 * (second + second.T)
    cov = second - np.outer(mean, mean)
    return Moments(mean=mean, second_moment=second, covariance=cov)


def two_point_prior(p: float) -> DiscretePrior:
    """Two-atom prior with mean 0 and variance 1.

    Atom sqrt((1-p)/p) carries probability p, atom -sqrt(p/(1-p)) carries
    probability 1-p; p tunes the asymmetry (p = 1/2 is Rademacher).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    hi = np.sqrt((1.0 - p) / p)
    lo = -np.sqrt(p / (1.0 - p))
    return DiscretePrior(atoms=np.array([hi, lo]), probs=np.array([p, 1.0 - p]))


def rademacher() -> DiscretePrior:
    return two_point_prior(0.5)


def point_mass(value) -> DiscretePrior:
    """Degenerate prior concentrated on a single point."""
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return DiscretePrior(atoms=v[None, :], probs=np.array([1.0]))


def gauss_hermite_prior(order: int = 41) -> DiscretePrior:
    """Gauss-Hermite discretization of N(0, 1) with `order` atoms.

    Matches the moments of the standard normal up to degree 2*order - 1;
    used to exercise the Gaussian closed forms on the discrete machinery.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    x, w = np.polynomial.hermite.hermgauss(order)
    return DiscretePrior(atoms=x * np.sqrt(2.0), probs=w / np.sqrt(np.pi))


def product_prior(
    p1: DiscretePrior, p2: DiscretePrior, support_cap: int = DEFAULT_SUPPORT_CAP
) -> DiscretePrior:
    """Independent product of two priors on the concatenated coordinates."""
    size = p1.support_size * p2.support_size
    if size > support_cap:
        raise ValueError(
            f"product support size {size} exceeds cap {support_cap}"
        )
    atoms = np.array(
        [np.concatenate([a, b]) for a, b in itertools.product(p1.atoms, p2.atoms)]
    )
    probs = np.array([x * y for x, y in itertools.product(p1.probs, p2.probs)])
    return DiscretePrior(atoms=atoms, probs=probs)


def from_spec(spec: dict) -> DiscretePrior:
    """Build a prior from its JSON run-config form.

    Accepted forms: {"two_point": p} or {"atoms": [[...], ...], "probs": [...]}.
    """
    if not isinstance(spec, dict):
        raise ValueError(f"prior spec must be a dict, got {type(spec).__name__}")
    if "two_point" in spec:
        return two_point_prior(spec["two_point"])
    if "atoms" in spec and "probs" in spec:
        return DiscretePrior(atoms=np.asarray(spec["atoms"], dtype=float),
                             probs=np.asarray(spec["probs"], dtype=float))
    raise ValueError("prior spec needs either 'two_point' or 'atoms'+'probs'")

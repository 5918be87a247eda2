import numpy as np
import pytest

from rslimits.priors import (
    DiscretePrior,
    from_spec,
    gauss_hermite_prior,
    moments,
    point_mass,
    product_prior,
    rademacher,
    two_point_prior,
)


def test_two_point_symmetric_is_rademacher():
    p = two_point_prior(0.5)
    assert np.allclose(sorted(p.atoms1d()), [-1.0, 1.0])
    assert np.allclose(p.probs, [0.5, 0.5])


def test_two_point_p01_atoms():
    p = two_point_prior(0.1)
    assert np.allclose(p.atoms1d(), [3.0, -1.0 / 3.0])
    assert np.allclose(p.probs, [0.1, 0.9])


@pytest.mark.parametrize("p", np.arange(0.01, 1.0, 0.01))
def test_two_point_standardized(p):
    prior = two_point_prior(p)
    m = moments(prior)
    assert abs(m.mean[0]) < 1e-12
    assert abs(m.covariance[0, 0] - 1.0) < 1e-12


@pytest.mark.parametrize("p", [0.0, 1.0, -0.2, 1.5])
def test_two_point_domain(p):
    with pytest.raises(ValueError):
        two_point_prior(p)


def test_moments_product_identity():
    prod = product_prior(rademacher(), rademacher())
    m = moments(prod)
    assert np.allclose(m.second_moment, np.eye(2), atol=1e-12)
    assert np.allclose(m.mean, 0.0, atol=1e-12)


def test_product_prior_rademacher_pair():
    prod = product_prior(rademacher(), rademacher())
    assert prod.dim == 2
    assert prod.support_size == 4
    assert np.allclose(prod.probs, 0.25)
    got = {tuple(a) for a in prod.atoms}
    assert got == {(1, 1), (1, -1), (-1, 1), (-1, -1)}


def test_product_prior_point_mass_appends_coordinate():
    prod = product_prior(two_point_prior(0.3), point_mass(2.5))
    assert prod.dim == 2
    assert np.allclose(prod.atoms[:, 1], 2.5)
    assert np.allclose(prod.probs, two_point_prior(0.3).probs)


def test_product_prior_asymmetric_probs():
    prod = product_prior(two_point_prior(0.1), two_point_prior(0.1))
    assert sorted(np.round(prod.probs, 12)) == [0.01, 0.09, 0.09, 0.81]


def test_product_prior_cap():
    big = gauss_hermite_prior(41)
    wide = product_prior(big, big)  # 1681 atoms, fine
    with pytest.raises(ValueError, match="cap"):
        product_prior(wide, big)


def test_block_diagonal_covariance():
    prod = product_prior(two_point_prior(0.2), two_point_prior(0.7))
    cov = moments(prod).covariance
    assert abs(cov[0, 1]) < 1e-12
    assert abs(cov[1, 0]) < 1e-12


def test_probs_validation():
    with pytest.raises(ValueError):
        DiscretePrior(atoms=np.array([1.0, -1.0]), probs=np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        DiscretePrior(atoms=np.array([1.0, -1.0]), probs=np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        DiscretePrior(atoms=np.array([1.0, -1.0]), probs=np.array([1.2, -0.2]))


def test_duplicate_atoms_rejected():
    with pytest.raises(ValueError, match="distinct"):
        DiscretePrior(atoms=np.array([1.0, 1.0 + 1e-13]), probs=np.array([0.5, 0.5]))


def test_nonfinite_atoms_rejected():
    with pytest.raises(ValueError):
        DiscretePrior(atoms=np.array([np.inf, 0.0]), probs=np.array([0.5, 0.5]))


def test_gauss_hermite_prior_moments():
    g = gauss_hermite_prior(41)
    m = moments(g)
    assert abs(m.mean[0]) < 1e-12
    assert abs(m.second_moment[0, 0] - 1.0) < 1e-10
    # fourth moment of N(0,1); the discretization matches high moments
    assert abs(g.probs @ g.atoms1d() ** 4 - 3.0) < 1e-8


def test_from_spec():
    p = from_spec({"two_point": 0.1})
    assert np.allclose(p.atoms1d(), [3.0, -1.0 / 3.0])
    q = from_spec({"atoms": [[1.0], [-1.0]], "probs": [0.5, 0.5]})
    assert q.dim == 1 and q.support_size == 2
    with pytest.raises(ValueError):
        from_spec({"nope": 1})
    with pytest.raises(ValueError):
        from_spec([1, 2])


def test_prior_is_immutable():
    p = rademacher()
    with pytest.raises(ValueError):
        p.atoms[0, 0] = 5.0

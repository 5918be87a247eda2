import numpy as np
import pytest
from scipy.integrate import quad as adaptive_quad

from rslimits.priors import (
    DiscretePrior,
    gauss_hermite_prior,
    moments,
    product_prior,
    rademacher,
    two_point_prior,
)
from rslimits.scalar_channel import (
    SNRMatrix,
    denoiser,
    denoiser_derivative,
    gauss_hermite,
    overlap1,
    overlap_F,
    overlap_nd,
    posterior_variance,
    psi,
    psi1,
    psi_nd,
)

QUAD = gauss_hermite()


def normal_expect(f):
    """Independent oracle for E f(Z), Z ~ N(0,1): adaptive quadrature."""
    g = lambda z: np.exp(-z * z / 2) / np.sqrt(2 * np.pi) * f(z)
    return adaptive_quad(g, -14, 14, limit=400)[0]


# ---------------------------------------------------------------------------
# Quadrature rule.


def test_gauss_hermite_low_moments():
    q = gauss_hermite(5)
    assert abs(q.weights.sum() - 1.0) < 1e-14
    assert abs(q.weights @ q.nodes**2 - 1.0) < 1e-12
    assert abs(q.weights @ q.nodes**4 - 3.0) < 1e-10


@pytest.mark.parametrize("order", [1, 2, 3, 5, 8])
def test_gauss_hermite_monomial_exactness(order):
    # exact for z^m, m <= 2*order - 1; odd moments vanish, even ones are
    # double factorials (m-1)!!
    q = gauss_hermite(order)
    for m in range(2 * order):
        exact = 0.0 if m % 2 else float(np.prod(np.arange(1, m, 2, dtype=float)))
        assert abs(q.weights @ q.nodes**m - exact) < 1e-9 * max(1.0, exact)


def test_gauss_hermite_order_range():
    with pytest.raises(ValueError):
        gauss_hermite(0)
    with pytest.raises(ValueError):
        gauss_hermite(513)


# ---------------------------------------------------------------------------
# SNR matrices.


def test_snr_matrix_validation():
    with pytest.raises(ValueError, match="symmetric"):
        SNRMatrix(np.array([[1.0, 0.5], [0.1, 1.0]]))
    with pytest.raises(ValueError, match="eigenvalue"):
        SNRMatrix(np.array([[1.0, 0.0], [0.0, -0.5]]))


def test_snr_matrix_root():
    g = SNRMatrix(np.array([[2.0, 0.6], [0.6, 1.0]]))
    assert np.abs(g.sqrt @ g.sqrt - g.matrix).max() < 1e-8
    # tiny negative eigenvalue is clipped, not rejected
    m = np.array([[1.0, 1.0], [1.0, 1.0 - 5e-11]])
    g = SNRMatrix(m)
    assert np.linalg.eigvalsh(g.matrix).min() >= 0.0


# ---------------------------------------------------------------------------
# psi.


def test_psi_zero_gamma_is_zero():
    for prior in (rademacher(), two_point_prior(0.1), gauss_hermite_prior(21)):
        assert psi(prior, 0.0, QUAD) == 0.0


def test_psi_rademacher_closed_form():
    # two-atom reduction: psi(gamma) = -gamma/2 + E log cosh(gamma + sqrt(gamma) Z)
    for gamma in (0.25, 1.0, 4.0):
        want = -gamma / 2 + normal_expect(
            lambda z: np.log(np.cosh(gamma + np.sqrt(gamma) * z))
        )
        assert abs(psi(rademacher(), gamma, QUAD) - want) < 1e-10


def test_psi_rademacher_monte_carlo_oracle():
    rng = np.random.default_rng(20231)
    z = rng.standard_normal(10**6)
    mc = -0.5 + np.log(np.cosh(1.0 + z)).mean()
    se = np.log(np.cosh(1.0 + z)).std() / 1000.0
    assert abs(psi(rademacher(), 1.0, QUAD) - mc) < 3 * se


def test_psi_gaussian_closed_form():
    g = gauss_hermite_prior(41)
    got = psi(g, 1.0, QUAD)
    assert abs(got - (0.5 - 0.5 * np.log(2.0))) < 1e-3


def test_psi_dim_mismatch():
    with pytest.raises(ValueError, match="dim"):
        psi(rademacher(), np.eye(2), QUAD)


def test_psi_large_gamma_finite():
    # log-sum-exp keeps gamma far past exp overflow safe
    val = psi(two_point_prior(0.1), 1e4, QUAD)
    assert np.isfinite(val)


def test_psi_convexity_grid():
    for prior in (rademacher(), two_point_prior(0.1)):
        vals = psi1(prior, np.linspace(0.0, 10.0, 41), QUAD)
        assert np.diff(vals, 2).min() >= -1e-8


# ---------------------------------------------------------------------------
# overlap function F.


def test_overlap_at_zero_is_mean_outer():
    assert overlap_F(rademacher(), 0.0, QUAD)[0, 0] == 0.0
    shifted = DiscretePrior(atoms=np.array([0.0, 2.0]), probs=np.array([0.5, 0.5]))
    assert abs(overlap_F(shifted, 0.0, QUAD)[0, 0] - 1.0) < 1e-12


def test_overlap_gaussian_closed_form():
    g = gauss_hermite_prior(41)
    got = overlap_F(g, 1.0, QUAD)[0, 0]
    assert abs(got - 0.5) < 1e-3


def test_overlap_product_separability():
    pa, pb = rademacher(), rademacher()
    prod = product_prior(pa, pb)
    g1, g2 = 0.7, 2.3
    F2 = overlap_F(prod, np.diag([g1, g2]), QUAD)
    f1 = overlap_F(pa, g1, QUAD)[0, 0]
    f2 = overlap_F(pb, g2, QUAD)[0, 0]
    assert abs(F2[0, 0] - f1) < 1e-10
    assert abs(F2[1, 1] - f2) < 1e-10
    assert abs(F2[0, 1]) < 1e-10


def test_overlap_gradient_identity_scalar():
    for prior in (rademacher(), two_point_prior(0.1)):
        for gamma in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0):
            h = 1e-4 * max(1.0, gamma)
            fd = (psi(prior, gamma + h, QUAD) - psi(prior, gamma - h, QUAD)) / (2 * h)
            half_f = overlap_F(prior, gamma, QUAD)[0, 0] / 2
            assert abs(fd - half_f) / abs(half_f) < 1e-5


def test_overlap_gradient_identity_matrix():
    prod = product_prior(rademacher(), two_point_prior(0.3))
    base = np.array([[1.5, 0.3], [0.3, 0.8]])
    F = overlap_nd(prod, SNRMatrix(base), QUAD)
    h = 1e-5
    for i in range(2):
        for j in range(i, 2):
            e = np.zeros((2, 2))
            e[i, j] = e[j, i] = 1.0
            fd = (
                psi_nd(prod, SNRMatrix(base + h * e), QUAD)
                - psi_nd(prod, SNRMatrix(base - h * e), QUAD)
            ) / (2 * h)
            want = 0.5 * F[i, i] if i == j else F[i, j]
            assert abs(fd - want) / max(abs(want), 1e-8) < 1e-5


def test_overlap_monotone_on_psd_pairs():
    prod = product_prior(rademacher(), two_point_prior(0.3))
    rng = np.random.default_rng(42)
    for _ in range(10):
        a = rng.standard_normal((2, 2))
        g1 = 0.5 * a @ a.T
        b = rng.standard_normal((2, 2))
        g2 = g1 + 0.5 * b @ b.T
        f1 = overlap_nd(prod, SNRMatrix(g1), QUAD)
        f2 = overlap_nd(prod, SNRMatrix(g2), QUAD)
        assert np.linalg.eigvalsh(f2 - f1 + 1e-8 * np.eye(2)).min() >= -1e-12


def test_overlap_range():
    prod = product_prior(rademacher(), two_point_prior(0.3))
    second = moments(prod).second_moment
    rng = np.random.default_rng(7)
    for _ in range(10):
        a = rng.standard_normal((2, 2))
        f = overlap_nd(prod, SNRMatrix(a @ a.T), QUAD)
        assert np.linalg.eigvalsh(f).min() >= -1e-10
        assert np.linalg.eigvalsh(second - f).min() >= -1e-10


def test_overlap_saturates():
    assert overlap_F(rademacher(), 1e4, QUAD)[0, 0] >= 0.999


def test_scalar_and_matrix_paths_agree():
    rad = rademacher()
    for gamma in (0.3, 1.0, 4.0, 25.0):
        a = psi_nd(rad, SNRMatrix([[gamma]]), QUAD)
        b = psi1(rad, np.array([gamma]), QUAD)[0]
        assert abs(a - b) < 1e-10
        c = overlap_nd(rad, SNRMatrix([[gamma]]), QUAD)[0, 0]
        d = overlap1(rad, np.array([gamma]), QUAD)[0]
        assert abs(c - d) < 1e-10


def test_qmc_path_separability():
    # k = 4 goes through the seeded Sobol branch; a diagonal SNR on a
    # product prior must reduce to the sum of 1-d free energies
    p2 = product_prior(rademacher(), rademacher())
    p4 = product_prior(p2, p2)
    diag = [0.5, 1.0, 2.0, 0.3]
    got = psi_nd(p4, SNRMatrix(np.diag(diag)), QUAD)
    want = sum(psi1(rademacher(), np.array([g]), QUAD)[0] for g in diag)
    assert abs(got - want) < 1e-3
    # deterministic: same value on repeat evaluation
    assert psi_nd(p4, SNRMatrix(np.diag(diag)), QUAD) == got


# ---------------------------------------------------------------------------
# Denoiser.


def test_denoiser_zero_gamma_returns_prior_mean():
    shifted = DiscretePrior(atoms=np.array([0.0, 2.0]), probs=np.array([0.5, 0.5]))
    for y in (-3.0, 0.0, 7.0):
        assert abs(denoiser(shifted, 0.0, y) - 1.0) < 1e-12


def test_denoiser_rademacher_is_tanh():
    y = np.linspace(-5, 5, 21)
    for gamma in (0.5, 2.0):
        got = denoiser(rademacher(), gamma, y)
        assert np.abs(got - np.tanh(np.sqrt(gamma) * y)).max() < 1e-12


def test_denoiser_two_atom_direct_ratio():
    # independent two-term evaluation of the posterior mean
    prior = two_point_prior(0.1)
    a, b = prior.atoms1d()
    pa, pb = prior.probs
    gamma = 1.7
    for y in (-2.0, 0.1, 3.5):
        wa = pa * np.exp(y * np.sqrt(gamma) * a - gamma * a * a / 2)
        wb = pb * np.exp(y * np.sqrt(gamma) * b - gamma * b * b / 2)
        want = (a * wa + b * wb) / (wa + wb)
        assert abs(denoiser(prior, gamma, y) - want) < 1e-12


def test_denoiser_bounded_by_atoms():
    prior = two_point_prior(0.05)
    y = np.array([-1e6, -3.0, 0.0, 3.0, 1e6])
    out = denoiser(prior, 2.0, y)
    assert np.all(np.isfinite(out))
    assert np.abs(out).max() <= prior.atom_bound + 1e-12


def test_denoiser_extreme_fields_no_nan():
    out = denoiser(two_point_prior(0.01), 1e4, np.array([-1e4, 1e4]))
    assert np.all(np.isfinite(out))


def test_denoiser_derivative_rademacher():
    y = np.linspace(-3, 3, 13)
    gamma = 2.0
    got = denoiser_derivative(rademacher(), gamma, y)
    want = np.sqrt(gamma) * (1 - np.tanh(np.sqrt(gamma) * y) ** 2)
    assert np.abs(got - want).max() < 1e-12


def test_denoiser_derivative_zero_gamma():
    assert denoiser_derivative(rademacher(), 0.0, 1.3) == 0.0


def test_denoiser_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    prior = two_point_prior(0.2)
    for y in rng.standard_normal(5) * 2:
        fd = (denoiser(prior, 1.5, y + 1e-5) - denoiser(prior, 1.5, y - 1e-5)) / 2e-5
        assert abs(denoiser_derivative(prior, 1.5, y) - fd) < 1e-6


def test_denoiser_derivative_matrix_finite_difference():
    prod = product_prior(rademacher(), two_point_prior(0.3))
    g = SNRMatrix(np.array([[1.2, 0.4], [0.4, 2.0]]))
    rng = np.random.default_rng(5)
    y = rng.standard_normal(2)
    jac = denoiser_derivative(prod, g, y)
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-5
        fd = (denoiser(prod, g, y + e) - denoiser(prod, g, y - e)) / 2e-5
        assert np.abs(jac[:, j] - fd).max() < 1e-6


def test_posterior_variance_matches_derivative_scaling():
    # natural-parameter derivative: d<x>/db = Var; in y-scale J = sqrt(g) Var
    prior = two_point_prior(0.2)
    y = np.array([-1.0, 0.5, 2.0])
    gamma = 1.8
    var = posterior_variance(prior, gamma, y)
    jac = denoiser_derivative(prior, gamma, y)
    assert np.abs(jac - np.sqrt(gamma) * var).max() < 1e-12

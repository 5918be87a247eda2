"""Asymptotic limits of low-rank non-symmetric matrix estimation.

Computes the replica-symmetric limits (free energy, mutual information,
MMSE) of the spiked rectangular model Y = sqrt(lambda/n) U V' + Z, locates
the information-theoretic threshold lambda_c, and validates the formulas
against an AMP simulator, a PCA baseline, and exact finite-n posterior
enumeration.
"""

__version__ = "0.1.0"

from .priors import (
    DiscretePrior,
    Moments,
    gauss_hermite_prior,
    moments,
    point_mass,
    product_prior,
    rademacher,
    two_point_prior,
)
from .scalar_channel import (
    GaussQuadrature,
    SNRMatrix,
    denoiser,
    denoiser_derivative,
    gauss_hermite,
    overlap_F,
    psi,
)
from .rs_formula import (
    BracketError,
    FixedPoint,
    RSSolution,
    SolverConfig,
    dmse,
    find_fixed_points,
    lambda_c,
    minmax_check,
    rs_potential,
    solve,
    state_evolution,
)
from .amp import (
    AMPState,
    Instance,
    amp_run,
    generate_instance,
    pca_asymptotic_mse,
    pca_baseline,
    se_predict,
)
from .oracle import (
    OracleEstimate,
    PosteriorTable,
    exact_posterior,
    free_energy_n,
    i_mmse_check,
    mmse_n,
    mutual_information_n,
    nishimori_check,
)

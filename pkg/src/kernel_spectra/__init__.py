"""Spectra of random inner-product kernel matrices in the polynomial regime."""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ComputationError,
    ConfigError,
    DomainError,
    KernelSpectraError,
    PreconditionError,
    ResourceError,
)
from .hermite import (  # noqa: E402
    HermiteSeries,
    NamedNonlinearity,
    PiecewiseNonlinearity,
    PolynomialNonlinearity,
    approximate,
    coeffs_by_quadrature,
    gauss_hermite_rule,
    h_eval,
    H_eval,
    poly_to_hermite,
    sigma_sq,
)
from .models import (  # noqa: E402
    DataDistribution,
    ModelParams,
    build_A,
    build_A_tilde,
    build_B,
    build_B_full,
    build_UTD,
    sample_X,
)
from .spectra import Spectrum, eigs, esd, stieltjes, sup_stieltjes_gap  # noqa: E402
from .theory import d_tau_grid, density, exponents, gammas, parse_ell, solve_m  # noqa: E402
from .estimators import KernelMatrix, KernelSpectrum  # noqa: E402

__all__ = [
    "ComputationError",
    "ConfigError",
    "DataDistribution",
    "DomainError",
    "H_eval",
    "HermiteSeries",
    "KernelMatrix",
    "KernelSpectraError",
    "KernelSpectrum",
    "ModelParams",
    "NamedNonlinearity",
    "PiecewiseNonlinearity",
    "PolynomialNonlinearity",
    "PreconditionError",
    "ResourceError",
    "Spectrum",
    "approximate",
    "build_A",
    "build_A_tilde",
    "build_B",
    "build_B_full",
    "build_UTD",
    "coeffs_by_quadrature",
    "d_tau_grid",
    "density",
    "eigs",
    "esd",
    "exponents",
    "gammas",
    "gauss_hermite_rule",
    "h_eval",
    "parse_ell",
    "poly_to_hermite",
    "sample_X",
    "sigma_sq",
    "solve_m",
    "stieltjes",
    "sup_stieltjes_gap",
]

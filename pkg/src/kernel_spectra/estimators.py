"""scikit-learn style wrappers.

Inputs follow the scikit-learn convention of one sample per row, so ``X`` has
shape ``(N, d)``; it is transposed to the ``d x N`` layout used internally.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .hermite import NamedNonlinearity, HermiteSeries, nonlinearity_from_dict
from .harness import series_for
from .models import build_A, build_A_tilde, build_B, build_B_full
from .spectra import eigs, stieltjes
from .theory import d_tau_grid, density, gammas, parse_ell, solve_m

_MODELS = ("A", "Atilde", "B", "Bfull")


def resolve_nonlinearity(spec):
    """Accept a nonlinearity object, a named function, a JSON dict, or Hermite coefficients."""
    if isinstance(spec, str):
        return NamedNonlinearity(spec)
    if isinstance(spec, dict):
        return nonlinearity_from_dict(spec)
    if isinstance(spec, (list, tuple, np.ndarray)):
        return HermiteSeries(spec)
    if callable(spec) and hasattr(spec, "breakpoints"):
        return spec
    raise ValueError(f"cannot interpret nonlinearity {spec!r}")


def _kernel(Xt, f, model, ell, hermite_degree):
    if model not in _MODELS:
        raise ValueError(f"model must be one of {_MODELS}")
    if model == "A":
        return build_A(Xt, f)
    if model == "Atilde":
        return build_A_tilde(Xt, f)
    series = series_for(f, hermite_degree)
    return build_B(Xt, series, ell) if model == "B" else build_B_full(Xt, series)


class KernelMatrix(TransformerMixin, BaseEstimator):
    """Map a sample matrix to its zero-diagonal inner-product kernel matrix.

    Parameters
    ----------
    nonlinearity : str, dict, sequence or nonlinearity object
        ``"relu"`` style names, a JSON object with a ``variant`` tag, or a
        list of Hermite coefficients.
    model : {"A", "Atilde", "B", "Bfull"}
        Which kernel matrix to build.
    ell : str
        Regime exponent, used by the ``B`` models only.
    hermite_degree : int
        Truncation degree when a non-polynomial nonlinearity must be expanded.
    """

    def __init__(self, nonlinearity="relu", model="A", ell="1", hermite_degree=8):
        self.nonlinearity = nonlinearity
        self.model = model
        self.ell = ell
        self.hermite_degree = hermite_degree

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        self.f_ = resolve_nonlinearity(self.nonlinearity)
        self.ell_ = parse_ell(self.ell)
        return self

    def transform(self, X):
        check_is_fitted(self, "f_")
        X = check_array(X, ensure_min_samples=2)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return _kernel(X.T, self.f_, self.model, self.ell_, self.hermite_degree)


class KernelSpectrum(BaseEstimator):
    """Empirical spectrum of a kernel matrix next to its predicted limit.

    ``fit`` computes the eigenvalues of the chosen kernel matrix and the
    constants of the limiting law at the realized ``kappa = N / d^ell``.
    ``score`` returns minus the largest gap between the two Stieltjes
    transforms over a rectangle of the upper half plane.
    """

    def __init__(self, nonlinearity="relu", model="A", ell="1", hermite_degree=8, tau=0.5):
        self.nonlinearity = nonlinearity
        self.model = model
        self.ell = ell
        self.hermite_degree = hermite_degree
        self.tau = tau

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        N, d = X.shape
        self.n_features_in_ = d
        f = resolve_nonlinearity(self.nonlinearity)
        ell = parse_ell(self.ell)
        self.series_ = series_for(f, self.hermite_degree)
        self.kappa_ = N / float(d) ** float(ell)
        self.gammas_ = tuple(gammas(self.series_, ell, self.kappa_))
        self.spectrum_ = eigs(_kernel(X.T, f, self.model, ell, self.hermite_degree), {"model": self.model})
        self.eigenvalues_ = self.spectrum_.eigenvalues
        return self

    def stieltjes(self, z):
        """Empirical transform ``(1/N) sum 1/(lambda_i - z)``."""
        check_is_fitted(self, "spectrum_")
        return stieltjes(self.spectrum_, z)

    def predict(self, z):
        """Limiting transform at ``z`` (upper half plane)."""
        check_is_fitted(self, "gammas_")
        return solve_m(z, self.gammas_)

    def density(self, E, eta=1e-6):
        check_is_fitted(self, "gammas_")
        return density(self.gammas_, E, eta)

    def score(self, X=None, y=None):
        """Minus the sup gap on the default grid (larger is better)."""
        check_is_fitted(self, "spectrum_")
        pts = d_tau_grid(self.tau).as_array()
        gap = np.max(np.abs(self.stieltjes(pts) - self.predict(pts)))
        return -float(gap) if math.isfinite(gap) else -math.inf

"""Data sampling and construction of the kernel matrices.

Data matrices are ``d x N`` with i.i.d. centered unit-variance entries;
column ``i`` is the sample ``X_i``. All kernel matrices are ``N x N``,
symmetric, with zero diagonal.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .exceptions import ComputationError, DomainError, ResourceError
from .hermite import HermiteSeries, PolynomialNonlinearity, poly_to_hermite
from .theory import ceil_ell, format_ell, parse_ell

MAX_LINEARIZATION_ROWS = 200_000
MAX_SYMMETRIC_DEGREE = 16

SQRT3 = math.sqrt(3.0)


# ---------------------------------------------------------------------------
# Distributions and parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DataDistribution:
    """Entry law of the data matrix: gaussian, rademacher, uniform, or discrete."""

    variant: str
    atoms: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.variant not in ("gaussian", "rademacher", "uniform", "discrete"):
            raise DomainError(f"unknown distribution {self.variant!r}")
        if self.variant == "discrete":
            atoms = np.asarray(self.atoms, dtype=float)
            probs = np.asarray(self.probs, dtype=float)
            if atoms.ndim != 1 or atoms.shape != probs.shape or atoms.size == 0:
                raise DomainError("discrete distribution needs matching atoms and probs")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise DomainError("probabilities must be non-negative and sum to 1")
            mean = float(np.dot(probs, atoms))
            var = float(np.dot(probs, atoms**2)) - mean**2
            if abs(mean) > 1e-12 or abs(var - 1.0) > 1e-12:
                raise DomainError(f"discrete distribution must have mean 0 and variance 1 (got {mean}, {var})")
            object.__setattr__(self, "atoms", tuple(float(a) for a in atoms))
            object.__setattr__(self, "probs", tuple(float(p) for p in probs))
        elif self.atoms or self.probs:
            raise DomainError("atoms/probs are only meaningful for the discrete variant")

    @classmethod
    def from_name(cls, name):
        return cls(name)

    def moment(self, k):
        """Analytic ``E[x^k]``."""
        if self.variant == "gaussian":
            return 0.0 if k % 2 else float(math.prod(range(k - 1, 0, -2)))
        if self.variant == "rademacher":
            return 0.0 if k % 2 else 1.0
        if self.variant == "uniform":
            return 0.0 if k % 2 else SQRT3**k / (k + 1)
        return float(np.dot(self.probs, np.asarray(self.atoms) ** k))

    def draw(self, rng, size):
        if self.variant == "gaussian":
            return rng.standard_normal(size)
        if self.variant == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0
        if self.variant == "uniform":
            return rng.uniform(-SQRT3, SQRT3, size)
        return rng.choice(np.asarray(self.atoms), size=size, p=np.asarray(self.probs))

    def to_dict(self):
        if self.variant == "discrete":
            return {"variant": "discrete", "atoms": list(self.atoms), "probs": list(self.probs)}
        return {"variant": self.variant}


@dataclass(frozen=True)
class ModelParams:
    """Dimensions ``d``, ``N`` and exponent ``ell``; ``kappa = N / d^ell`` is derived."""

    d: int
    N: int
    ell: Fraction = Fraction(1)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("d must be a positive integer")
        if int(self.N) != self.N or self.N < 2:
            raise DomainError("N must be an integer >= 2")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "ell", parse_ell(self.ell))

    @property
    def kappa(self):
        return self.N / float(self.d) ** float(self.ell)

    @classmethod
    def from_kappa(cls, d, kappa, ell):
        """Derive ``N = round(kappa d^ell)``."""
        ell = parse_ell(ell)
        N = int(round(kappa * float(d) ** float(ell)))
        return cls(d, N, ell)

    def to_dict(self):
        return {"d": self.d, "N": self.N, "ell": format_ell(self.ell), "kappa": self.kappa}


@dataclass(frozen=True, eq=False)
class DataMatrix:
    entries: np.ndarray
    params: ModelParams
    seed: int
    dist: DataDistribution = field(default_factory=lambda: DataDistribution("gaussian"))

    @property
    def d(self):
        return self.params.d

    @property
    def N(self):
        return self.params.N


def _column_rng(seed, i):
    # Philox with a 128-bit key (seed, column): each column is its own stream,
    # so entries never depend on how columns are scheduled.
    key = ((int(seed) & 0xFFFFFFFFFFFFFFFF) << 64) | int(i)
    return np.random.Generator(np.random.Philox(key=key))


def sample_X(dist, params, seed):
    """Draw the ``d x N`` data matrix; column ``i`` comes from the stream keyed by ``(seed, i)``."""
    if isinstance(dist, str):
        dist = DataDistribution(dist)
    X = np.empty((params.d, params.N))
    for i in range(params.N):
        X[:, i] = dist.draw(_column_rng(seed, i), params.d)
    X.setflags(write=False)
    return DataMatrix(X, params, int(seed), dist)


def _entries(X):
    return np.asarray(X.entries if isinstance(X, DataMatrix) else X, dtype=float)


def _symmetrize_upper(M):
    """Mirror the upper triangle; removes any rounding asymmetry of the products."""
    upper = np.triu(M, 1)
    return upper + upper.T


# ---------------------------------------------------------------------------
# Kernel matrices
# ---------------------------------------------------------------------------


def gram(X):
    """Symmetric ``<X_i, X_j> / sqrt(d)`` with the upper triangle as reference."""
    X = _entries(X)
    d = X.shape[0]
    G = (X.T @ X) / math.sqrt(d)
    return np.triu(G) + np.triu(G, 1).T


def build_A(X, f):
    """``A_ij = f(<X_i,X_j>/sqrt(d)) / sqrt(N)`` off the diagonal, zero on it."""
    Xe = _entries(X)
    N = Xe.shape[1]
    vals = np.asarray(f(gram(Xe)), dtype=float)
    if vals.shape != (N, N) or not np.all(np.isfinite(vals)):
        raise ComputationError("nonlinearity returned non-finite or mis-shaped values")
    return _symmetrize_upper(vals) / math.sqrt(N)


def normalized_columns(X):
    """``sqrt(d) X_i / ||X_i||`` (zero columns stay zero) and the nonzero mask."""
    Xe = _entries(X)
    d = Xe.shape[0]
    norms = np.sqrt(np.sum(Xe * Xe, axis=0))
    ok = norms > 0
    scale = np.zeros_like(norms)
    scale[ok] = math.sqrt(d) / norms[ok]
    return Xe * scale[None, :], ok


def build_A_tilde(X, f):
    """Kernel on normalized samples; rows/columns of zero-norm samples are zero."""
    Xe = _entries(X)
    N = Xe.shape[1]
    Xt, ok = normalized_columns(Xe)
    vals = np.asarray(f(gram(Xt)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ComputationError("nonlinearity returned non-finite values")
    mask = np.outer(ok, ok)
    return _symmetrize_upper(np.where(mask, vals, 0.0)) / math.sqrt(N)


def elementary_symmetric(w, k_max):
    """``e_0(w), ..., e_{k_max}(w)`` by Newton's identities from power sums.

    ``w`` may carry trailing axes: the symmetric functions are taken along
    axis 0, so a ``d x ...`` array yields one vector per trailing index.
    """
    if k_max > MAX_SYMMETRIC_DEGREE:
        raise DomainError(f"k_max must be at most {MAX_SYMMETRIC_DEGREE}")
    w = np.asarray(w, dtype=float)
    power = [None] + [np.sum(w**m, axis=0) for m in range(1, k_max + 1)]
    return _newton(power, k_max, w.shape[0])


def _newton(power, k_max, d):
    shape = np.shape(power[1]) if k_max >= 1 else ()
    e = [np.ones(shape)]
    for k in range(1, k_max + 1):
        if k > d:
            e.append(np.zeros(shape))
            continue
        acc = np.zeros(shape)
        for m in range(1, k + 1):
            term = e[k - m] * power[m]
            acc = acc + term if m % 2 == 1 else acc - term
        e.append(acc / k)
    return np.array(e)


def tuple_sums(X, k_max):
    """Matrices ``S_k[i,j] = e_k(X_{.i} * X_{.j})`` for ``k = 0..k_max``.

    Power sums of the pairwise products are Gram matrices of entrywise
    powers, ``p_m[i,j] = sum_a X_ai^m X_aj^m``, so every ``S_k`` costs
    ``k_max`` matrix products.
    """
    Xe = _entries(X)
    d = Xe.shape[0]
    if k_max > MAX_SYMMETRIC_DEGREE:
        raise DomainError(f"degree must be at most {MAX_SYMMETRIC_DEGREE}")
    power = [None]
    for m in range(1, k_max + 1):
        Xm = Xe**m
        P = Xm.T @ Xm
        power.append(np.triu(P) + np.triu(P, 1).T)
    if k_max == 0:
        N = Xe.shape[1]
        return np.ones((1, N, N))
    return _newton(power, k_max, d)


def _as_series(series):
    if isinstance(series, HermiteSeries):
        return series
    if isinstance(series, PolynomialNonlinearity):
        return poly_to_hermite(series.coeffs)
    return HermiteSeries(series)


def _tuple_kernel(X, series, k_lo, rescale=None):
    series = _as_series(series)
    Xe = _entries(X)
    d, N = Xe.shape
    L = series.degree
    out = np.zeros((N, N))
    if L < k_lo:
        return out
    S = tuple_sums(Xe, L)
    for k in range(k_lo, L + 1):
        c = series.coeff(k)
        if c == 0.0:
            continue
        term = (c * math.sqrt(math.factorial(k)) / d ** (k / 2)) * S[k]
        if rescale is not None:
            term = term * rescale**k
        out += term
    return _symmetrize_upper(out) / math.sqrt(N)


def build_B(X, series, ell):
    """Main-term matrix: Hermite degrees ``k >= ceil(ell)`` written as tuple sums.

    ``B_ij = N^{-1/2} sum_k c_k sqrt(k!) d^{-k/2} e_k(X_i * X_j)`` for ``i != j``.
    """
    return _tuple_kernel(X, series, ceil_ell(ell))


def build_B_full(X, series):
    """Same as :func:`build_B` but keeping every degree from 0."""
    return _tuple_kernel(X, series, 0)


def build_B_tilde_full(X, series):
    """Full tuple-sum kernel on normalized samples ``sqrt(d) X_i / ||X_i||``."""
    Xe = _entries(X)
    Xt, ok = normalized_columns(Xe)
    out = _tuple_kernel(Xt, series, 0)
    return np.where(np.outer(ok, ok), out, 0.0)


def brute_force_tuple_kernel(X, series, k_lo):
    """Reference kernel by explicit enumeration of increasing index tuples (tiny d only)."""
    series = _as_series(series)
    Xe = _entries(X)
    d, N = Xe.shape
    out = np.zeros((N, N))
    for k in range(k_lo, series.degree + 1):
        c = series.coeff(k)
        if c == 0.0:
            continue
        pref = c * math.sqrt(math.factorial(k)) / d ** (k / 2)
        for i in range(N):
            for j in range(i + 1, N):
                s = 0.0
                for tup in itertools.combinations(range(d), k):
                    prod = 1.0
                    for a in tup:
                        prod *= Xe[a, i] * Xe[a, j]
                    s += prod
                out[i, j] += pref * s
                out[j, i] = out[i, j]
    return out / math.sqrt(N)


# ---------------------------------------------------------------------------
# Linearization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Linearization:
    """``B = U^T T U - D`` with ``T`` and ``D`` diagonal.

    ``index`` lists the tuple ``(k, (a_1 < ... < a_k))`` labelling each row of ``U``.
    """

    U: np.ndarray
    T_diag: np.ndarray
    D_diag: np.ndarray
    index: tuple
    d: int
    ell: Fraction

    @property
    def M(self):
        return self.U.shape[0]

    @property
    def N(self):
        return self.U.shape[1]

    def degree_rows(self, k):
        """Row indices of the degree-``k`` block."""
        return np.array([r for r, (kk, _) in enumerate(self.index) if kk == k], dtype=int)

    def B(self):
        return self.U.T @ (self.T_diag[:, None] * self.U) - np.diag(self.D_diag)


def build_UTD(X, series, ell):
    """Explicit linearization; degrees with zero coefficient are skipped."""
    series = _as_series(series)
    Xe = _entries(X)
    d, N = Xe.shape
    ell = parse_ell(ell)
    ks = [k for k in range(ceil_ell(ell), series.degree + 1) if series.coeff(k) != 0.0]
    M = sum(math.comb(d, k) for k in ks)
    if M > MAX_LINEARIZATION_ROWS:
        raise ResourceError(f"linearization needs M={M} rows (limit {MAX_LINEARIZATION_ROWS})")
    rows, T, index = [], [], []
    for k in ks:
        tval = series.coeff(k) * math.sqrt(math.factorial(k)) * math.sqrt(N / d**k)
        for tup in itertools.combinations(range(d), k):
            rows.append(np.prod(Xe[list(tup), :], axis=0) / math.sqrt(N))
            T.append(tval)
            index.append((k, tup))
    U = np.array(rows).reshape(len(rows), N)
    T = np.array(T, dtype=float)
    D = np.einsum("mi,m,mi->i", U, T, U)
    return Linearization(U, T, D, tuple(index), d, ell)


def build_H(lin, z):
    """Block matrix ``[[-T^{-1}, U], [U^T, -z - D]]``."""
    if not complex(z).imag > 0:
        raise DomainError("build_H requires Im z > 0")
    if np.any(lin.T_diag == 0):
        raise DomainError("T must be invertible")
    M, N = lin.M, lin.N
    H = np.zeros((M + N, M + N), dtype=complex)
    H[:M, :M] = np.diag(-1.0 / lin.T_diag)
    H[:M, M:] = lin.U
    H[M:, :M] = lin.U.T
    H[M:, M:] = np.diag(-z - lin.D_diag)
    return H


def overlap(mu, nu):
    """Number of shared coordinates of two index tuples."""
    return len(set(mu) & set(nu))

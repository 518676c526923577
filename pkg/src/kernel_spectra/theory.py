"""Limiting spectral law of inner-product kernel matrices.

The limit Stieltjes transform ``m(z)`` is the unique upper-half-plane
solution of

    m (z + ga m / (1 + gb m) + gc m) + 1 = 0,

i.e. the free additive convolution of a Marchenko-Pastur law (weights
``ga``, ``gb``) with a semicircle of variance ``gc``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .exceptions import ComputationError, DomainError
from .hermite import HermiteSeries


# ---------------------------------------------------------------------------
# Exponent bookkeeping
# ---------------------------------------------------------------------------


def parse_ell(value):
    """Parse an exponent given as ``Fraction``, int, or ``"p/q"`` string.

    Floats are rejected: whether the exponent is an integer changes the
    limit law discontinuously and must not depend on rounding.
    """
    if isinstance(value, bool):
        raise DomainError("exponent must be a rational, not a bool")
    if isinstance(value, Fraction):
        ell = value
    elif isinstance(value, int):
        ell = Fraction(value)
    elif isinstance(value, str):
        text = value.strip()
        if "." in text or "e" in text.lower():
            raise DomainError(f"exponent {value!r} must be written as an integer or p/q, not a decimal")
        try:
            num, _, den = text.partition("/")
            ell = Fraction(int(num), int(den) if den else 1)
        except (ValueError, ZeroDivisionError) as exc:
            raise DomainError(f"malformed rational exponent {value!r}") from exc
    else:
        raise DomainError(f"exponent must be int, Fraction or 'p/q' string, got {type(value).__name__}")
    if ell <= 0:
        raise DomainError("exponent must be positive")
    return ell


def format_ell(ell):
    ell = parse_ell(ell)
    return str(ell.numerator) if ell.denominator == 1 else f"{ell.numerator}/{ell.denominator}"


def is_integer(ell):
    return parse_ell(ell).denominator == 1


def ceil_ell(ell):
    ell = parse_ell(ell)
    return -((-ell.numerator) // ell.denominator)


def ell_c(ell):
    """Smallest integer strictly greater than ``ell``."""
    ell = parse_ell(ell)
    return ell.numerator // ell.denominator + 1


class Exponents(NamedTuple):
    p_ell: Fraction
    q_ell: Fraction
    r_ell: Fraction
    ell_c: int


def exponents(ell):
    """Rate exponents for the regime ``N ~ d^ell`` in exact arithmetic."""
    ell = parse_ell(ell)
    lc = ell_c(ell)
    frac = ell - (ell.numerator // ell.denominator)
    if frac == 0:
        p = Fraction(1, 2)
    else:
        p = min(frac, 1 - frac) / 2
    q = min(ell, Fraction(1), lc - ell) / 2
    r = (1 + ell - ceil_ell(ell)) / 2
    return Exponents(p, q, r, lc)


# ---------------------------------------------------------------------------
# Limit-law constants
# ---------------------------------------------------------------------------


class Gammas(NamedTuple):
    gamma_a: float
    gamma_b: float
    gamma_c: float


def gammas(series, ell, kappa):
    """Constants of the self-consistent equation for a Hermite series.

    ``gamma_a = c_ell^2`` and ``gamma_b = c_ell sqrt(ell! kappa)`` when ``ell``
    is an integer (zero otherwise); ``gamma_c`` is the squared mass of the
    coefficients of degree at least ``ell_c``.
    """
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    ell = parse_ell(ell)
    if not isinstance(series, HermiteSeries):
        series = HermiteSeries(series)
    c = series.coeffs
    if ell.denominator == 1:
        k = ell.numerator
        c_ell = series.coeff(k)
        ga = c_ell * c_ell
        # keep gamma_a = 0 <=> gamma_b = 0 even when c_ell^2 underflows
        gb = c_ell * math.sqrt(math.factorial(k) * kappa) if ga != 0.0 else 0.0
    else:
        ga = gb = 0.0
    lc = ell_c(ell)
    tail = c[lc:]
    gc = float(np.sum(tail * tail)) if tail.size else 0.0
    return Gammas(float(ga), float(gb), gc)


# ---------------------------------------------------------------------------
# Complex grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexGrid:
    """Points in ``D_tau = {E + i eta : tau <= eta <= 1/tau, |E| <= 1/tau}``."""

    tau: float
    points: tuple

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        pts = tuple(complex(z) for z in self.points)
        tol = 1e-12
        for z in pts:
            if not (self.tau - tol <= z.imag <= 1 / self.tau + tol and abs(z.real) <= 1 / self.tau + tol):
                raise DomainError(f"point {z} lies outside D_tau for tau={self.tau}")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def as_array(self):
        return np.array(self.points, dtype=complex)


def d_tau_grid(tau, n_re=5, n_im=5):
    """Regular ``n_re x n_im`` grid filling ``D_tau``."""
    re = np.linspace(-1 / tau, 1 / tau, n_re) if n_re > 1 else np.zeros(1)
    im = np.linspace(tau, 1 / tau, n_im) if n_im > 1 else np.array([tau])
    return ComplexGrid(tau, tuple(complex(e, h) for h in im for e in re))


# ---------------------------------------------------------------------------
# Self-consistent equation
# ---------------------------------------------------------------------------


def cubic_coefficients(z, g):
    """Coefficients (highest degree first) of the cleared-denominator equation."""
    ga, gb, gc = g
    return [gb * gc, z * gb + ga + gc, z + gb, 1.0 + 0j]


def _all_roots(z, g):
    """All roots in ``m`` of the cleared polynomial for each z; shape (len(z), 3).

    The polynomial is solved in ``w = 1/m``, where it is monic,
    ``w^3 + (z + gb) w^2 + (z gb + ga + gc) w + gb gc = 0``, so the companion
    matrix never degenerates as ``gb gc -> 0``. A root ``w = 0`` stands for the
    root at infinity and is returned as ``inf``.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    ga, gb, gc = (float(v) for v in g)
    b = z + gb
    c = z * gb + ga + gc
    e = np.full_like(z, gb * gc)
    companion = np.zeros(z.shape + (3, 3), dtype=complex)
    companion[:, 0, 0] = -b
    companion[:, 0, 1] = -c
    companion[:, 0, 2] = -e
    companion[:, 1, 0] = 1.0
    companion[:, 2, 1] = 1.0
    w = np.linalg.eigvals(companion)
    if gb * gc == 0.0:
        # the polynomial in m has dropped a degree: w = 0 is an exact root
        w[np.arange(len(z)), np.argmin(np.abs(w), axis=1)] = 0.0
    # Newton on the monic form restores relative accuracy of tiny roots
    bb, cc, ee = b[:, None], c[:, None], e[:, None]
    for _ in range(2):
        f = ((w + bb) * w + cc) * w + ee
        df = (3 * w + 2 * bb) * w + cc
        ok = df != 0
        w = np.where(ok, w - np.where(ok, f, 0) / np.where(ok, df, 1), w)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        m = np.where(w != 0, 1.0 / np.where(w != 0, w, 1), np.inf)
    return m


def _polish(m, z, g, steps=2):
    """Newton steps on the cleared polynomial."""
    ga, gb, gc = g
    for _ in range(steps):
        p = ((gb * gc * m + (z * gb + ga + gc)) * m + (z + gb)) * m + 1.0
        dp = (3 * gb * gc * m + 2 * (z * gb + ga + gc)) * m + (z + gb)
        ok = dp != 0
        m = np.where(ok, m - np.where(ok, p, 0) / np.where(ok, dp, 1), m)
    return m


def _homotopy(z, g, n_steps=200):
    """Follow the upper-half-plane branch from z + 10i, where m ~ -1/z."""
    start = z + 10j
    path = start + (z - start) * np.linspace(0.0, 1.0, n_steps + 1)
    current = -1.0 / path[0]
    roots = _all_roots(path[0], g)[0]
    current = roots[np.argmin(np.abs(roots - current))]
    for w in path[1:]:
        roots = _all_roots(w, g)[0]
        current = roots[np.argmin(np.abs(roots - current))]
    return current


def solve_m(z, g):
    """Upper-half-plane solution ``m(z)`` of the self-consistent equation.

    Accepts a scalar or an array of ``z`` with ``Im z > 0``. Roots of the
    cleared cubic (or its quadratic / linear degenerations) are found as
    companion-matrix eigenvalues; the single root with positive imaginary
    part is selected. Should several qualify, the branch is tracked from
    ``z + 10i`` by continuation.
    """
    g = Gammas(*(float(v) for v in g))
    scalar = np.ndim(z) == 0
    zs = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(~(zs.imag > 0)):
        raise DomainError("solve_m requires Im z > 0")
    if g == (0.0, 0.0, 0.0):
        # point mass at zero: return the closed form rather than a polished root
        out = 1.0 / (-zs)
        return complex(out[0]) if scalar else out
    roots = _all_roots(zs, g)
    roots = np.where(np.isfinite(roots), roots, complex(0.0, -np.inf))
    upper = roots.imag > 0
    count = upper.sum(axis=1)
    best = roots[np.arange(len(zs)), np.argmax(roots.imag, axis=1)]
    if np.any(best.imag <= -1e-13):
        bad = zs[best.imag <= -1e-13][0]
        raise ComputationError(f"no upper-half-plane root at z={bad} for gammas={tuple(g)}")
    for idx in np.flatnonzero(count > 1):
        best[idx] = _homotopy(zs[idx], g)
    out = _polish(best, zs, g)
    # Newton may cross the real axis only through rounding; keep the clean root then
    out = np.where(out.imag >= 0, out, best)
    return complex(out[0]) if scalar else out


def count_upper_roots(z, g, tol=1e-10):
    """Number of roots of the cleared polynomial with ``Im m > tol``."""
    roots = _all_roots(z, Gammas(*g))
    roots = np.where(np.isfinite(roots), roots, 0)
    return (roots.imag > tol).sum(axis=1) if np.ndim(z) else int((roots.imag > tol).sum())


def residual(m, z, g):
    """``1/m + z + ga m / (1 + gb m) + gc m``; zero at the exact solution."""
    ga, gb, gc = (float(v) for v in g)
    m = np.asarray(m, dtype=complex)
    z = np.asarray(z, dtype=complex)
    denom = 1.0 + gb * m
    if np.any(m == 0) or np.any(denom == 0):
        raise DomainError("residual is singular at m = 0 or 1 + gamma_b m = 0")
    out = 1.0 / m + z + ga * m / denom + gc * m
    return complex(out) if out.ndim == 0 else out


def equation_defect(m, z, g):
    """``m (z + ga m / (1 + gb m) + gc m) + 1``, the unflipped form."""
    ga, gb, gc = (float(v) for v in g)
    return m * (z + ga * m / (1.0 + gb * m) + gc * m) + 1.0


class StabilityBound(NamedTuple):
    value: float
    applicable: bool


def stability_bound(omega_abs, eta):
    """Bound ``4 |omega| / eta^2`` on ``|s - m|`` for an approximate solution ``s``.

    Only valid when ``|omega| <= eta / 2``; otherwise the result is returned
    with ``applicable=False``.
    """
    if not eta > 0:
        raise DomainError("eta must be positive")
    omega_abs = float(omega_abs)
    return StabilityBound(4.0 * omega_abs / eta**2, omega_abs <= eta / 2)


def semicircle_m(z, gamma_c):
    """Stieltjes transform of the semicircle law of variance ``gamma_c``."""
    if gamma_c == 0:
        raise DomainError("gamma_c = 0 is the point mass; use -1/z")
    if not gamma_c > 0:
        raise DomainError("gamma_c must be positive")
    z = np.asarray(z, dtype=complex)
    if np.any(~(z.imag > 0)):
        raise DomainError("semicircle_m requires Im z > 0")
    root = np.sqrt(z * z - 4.0 * gamma_c)
    m1 = (-z + root) / (2.0 * gamma_c)
    m2 = (-z - root) / (2.0 * gamma_c)
    out = np.where(m1.imag > 0, m1, m2)
    return complex(out) if out.ndim == 0 else out


def semicircle_cdf(x, gamma_c):
    """CDF of the semicircle law on ``[-2 sqrt(gc), 2 sqrt(gc)]``."""
    r = 2.0 * math.sqrt(gamma_c)
    t = np.clip(np.asarray(x, dtype=float) / r, -1.0, 1.0)
    return 0.5 + (t * np.sqrt(1.0 - t * t) + np.arcsin(t)) / math.pi


def support_radius(g):
    """Crude bound on the support of the limit law, for grid ranges."""
    ga, gb, gc = g
    mp = abs(ga) / abs(gb) * (1 + abs(gb)) ** 2 if gb != 0 else 0.0
    return 2.0 * math.sqrt(gc) + mp + abs(gb) + 1e-12


def density(g, E_grid, eta_small=1e-6):
    """Density ``Im m(E + i eta) / pi`` of the limit law on a real grid."""
    if not 1e-8 <= eta_small <= 1e-3:
        raise DomainError("eta_small must lie in [1e-8, 1e-3]")
    E = np.asarray(E_grid, dtype=float)
    m = solve_m(E + 1j * eta_small, g)
    return np.asarray(m).imag / math.pi

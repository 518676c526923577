"""Eigenvalues and the spectral statistics built on them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigvalsh

from .exceptions import DomainError, PreconditionError
from .theory import ComplexGrid, semicircle_cdf, solve_m


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Sorted eigenvalues of a symmetric matrix plus free-form provenance."""

    eigenvalues: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.sort(np.asarray(self.eigenvalues, dtype=float).ravel())
        lam.setflags(write=False)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def N(self):
        return self.eigenvalues.size

    def __len__(self):
        return self.N


@dataclass(frozen=True, eq=False)
class Measure:
    """Histogram measure on uniform bins."""

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=float)
        masses = np.asarray(self.masses, dtype=float)
        if edges.ndim != 1 or masses.shape != (edges.size - 1,):
            raise DomainError("need len(edges) == len(masses) + 1")
        if np.any(masses < 0):
            raise DomainError("masses must be non-negative")
        if masses.sum() > 1 + 1e-12:
            raise DomainError("total mass exceeds one")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)

    @property
    def total(self):
        return float(self.masses.sum())

    def cdf(self):
        """Cumulative mass at each edge, starting with 0."""
        return np.concatenate([[0.0], np.cumsum(self.masses)])


def eigs(matrix, meta=None):
    """Full spectrum of a real symmetric matrix."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise PreconditionError("eigs needs a square matrix")
    scale = max(float(np.max(np.abs(A))) if A.size else 0.0, 1e-300)
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-12 * scale:
        raise PreconditionError("matrix is not symmetric")
    lam = eigvalsh(A, check_finite=True, driver="evd")
    return Spectrum(lam, dict(meta or {}))


def stieltjes(spec, z):
    """``(1/N) sum_i 1 / (lambda_i - z)``; ``z`` may be an array."""
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec, dtype=float)
    z_arr = np.asarray(z, dtype=complex)
    zz = z_arr.ravel()
    diff = lam[None, :] - zz[:, None]
    if np.any(diff == 0):
        raise DomainError("z coincides with an eigenvalue on the real axis")
    out = np.mean(1.0 / diff, axis=1)
    return complex(out[0]) if z_arr.ndim == 0 else out.reshape(z_arr.shape)


def esd(spec, bins, range):
    """Histogram of the eigenvalues normalized by N (mass outside ``range`` is dropped)."""
    lo, hi = range
    if bins < 1 or not lo < hi:
        raise DomainError("need bins >= 1 and lo < hi")
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.asarray(spec, dtype=float)
    counts, edges = np.histogram(lam, bins=bins, range=(lo, hi))
    return Measure(edges, counts / lam.size)


def measure_from_cdf(cdf, edges):
    """Bin masses of a law with the given CDF."""
    edges = np.asarray(edges, dtype=float)
    c = np.asarray(cdf(edges), dtype=float)
    return Measure(edges, np.clip(np.diff(c), 0.0, None))


def semicircle_measure(gamma_c, edges):
    return measure_from_cdf(lambda x: semicircle_cdf(x, gamma_c), edges)


def ks_distance(a, b):
    """Largest gap between the two cumulative mass functions over bin edges."""
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise PreconditionError("measures must share bin edges")
    return float(np.max(np.abs(a.cdf() - b.cdf())))


def ks_to_cdf(spec, cdf):
    """Exact Kolmogorov-Smirnov distance between an ESD and a continuous CDF."""
    lam = spec.eigenvalues if isinstance(spec, Spectrum) else np.sort(np.asarray(spec, dtype=float))
    n = lam.size
    F = np.asarray(cdf(lam), dtype=float)
    upper = np.arange(1, n + 1) / n - F
    lower = F - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def default_range(g, margin_scale=3.0):
    """Histogram range: theory support widened by ``3 sqrt(gc + 1)``."""
    from .theory import support_radius

    r = support_radius(g) + margin_scale * math.sqrt(g[2] + 1.0)
    return (-r, r)


def stieltjes_gaps(spec, g, grid):
    """``|s(z) - m(z)|`` at each grid point."""
    pts = grid.as_array() if isinstance(grid, ComplexGrid) else np.asarray(grid, dtype=complex)
    return np.abs(stieltjes(spec, pts) - solve_m(pts, g))


def sup_stieltjes_gap(spec, g, grid):
    """Max over the grid of ``|s(z) - m(z)|``."""
    return float(np.max(stieltjes_gaps(spec, g, grid)))


def operator_norm_estimate(M, iters=200, seed=0):
    """Largest singular value of a symmetric matrix by power iteration."""
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = M @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        est = nrm
    return float(est)

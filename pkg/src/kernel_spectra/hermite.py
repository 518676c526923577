"""Normalized Hermite polynomials and Hermite expansions of nonlinearities.

The basis is orthonormal for the standard Gaussian weight,
``E[h_i(Z) h_j(Z)] = delta_ij``, so that ``h_0 = 1``, ``h_1 = x``,
``h_2 = (x^2 - 1)/sqrt(2)`` and the monic polynomials satisfy
``H_k = sqrt(k!) h_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .exceptions import ComputationError, DomainError, PreconditionError
from .serialization import dumps

MAX_DEGREE = 64

# Composite Gauss-Legendre panels used when a nonlinearity has breakpoints.
_PANEL_WIDTH = 0.5
_PANEL_NODES = 24


def _check_degree(k):
    if int(k) != k or k < 0 or k > MAX_DEGREE:
        raise DomainError(f"Hermite degree must be an integer in [0, {MAX_DEGREE}], got {k}")
    return int(k)


def h_all(k_max, x):
    """Return ``h_0(x), ..., h_{k_max}(x)`` stacked along a new leading axis.

    Uses the normalized three-term recurrence
    ``sqrt(k+1) h_{k+1} = x h_k - sqrt(k) h_{k-1}``, which never forms ``k!``.
    """
    k_max = _check_degree(k_max)
    x = np.asarray(x, dtype=float)
    out = np.empty((k_max + 1,) + x.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = x
    for k in range(1, k_max):
        out[k + 1] = (x * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def h_eval(k, x):
    """Normalized Hermite polynomial ``h_k`` evaluated at ``x`` (scalar or array)."""
    k = _check_degree(k)
    val = h_all(k, x)[k]
    return float(val) if val.ndim == 0 else val


def H_eval(k, x):
    """Monic (probabilists') Hermite polynomial ``H_k = x H_{k-1} - (k-1) H_{k-2}``."""
    k = _check_degree(k)
    x = np.asarray(x, dtype=float)
    prev, cur = np.zeros_like(x), np.ones_like(x)
    for j in range(k):
        prev, cur = cur, x * cur - j * prev
    return float(cur) if cur.ndim == 0 else cur


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussHermiteRule:
    """Quadrature nodes and weights for ``E_{Z~N(0,1)}[g(Z)]``; weights sum to one."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def expect(self, fn):
        return float(np.dot(self.weights, fn(self.nodes)))


@lru_cache(maxsize=None)
def gauss_hermite_rule(order):
    """Golub-Welsch rule of the given order for the standard Gaussian.

    Nodes are eigenvalues of the Jacobi matrix of the monic recurrence, polished
    by one Newton step; weights come from the Christoffel function
    ``1 / sum_k h_k(x)^2``, which is better conditioned than squared
    eigenvector components at the tails.
    """
    order = int(order)
    if order < 1:
        raise DomainError("quadrature order must be positive")
    if order == 1:
        return _freeze_rule(1, np.zeros(1), np.ones(1))
    off = np.sqrt(np.arange(1, order, dtype=float))
    nodes = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
    # one Newton step on h_order, using h_n' = sqrt(n) h_{n-1}
    vals = h_all(min(order, MAX_DEGREE), nodes) if order <= MAX_DEGREE else None
    if vals is not None:
        nodes = nodes - vals[order] / (math.sqrt(order) * vals[order - 1])
    # Christoffel weights; the recurrence is run directly so orders above
    # MAX_DEGREE stay available for quadrature.
    total = np.ones_like(nodes)
    hm, hk = np.zeros_like(nodes), np.ones_like(nodes)
    for k in range(0, order - 1):
        hm, hk = hk, (nodes * hk - math.sqrt(k) * hm) / math.sqrt(k + 1)
        total += hk * hk
    weights = 1.0 / total
    weights /= weights.sum()
    # symmetrize away rounding noise
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return _freeze_rule(order, nodes, weights)


def _freeze_rule(order, nodes, weights):
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussHermiteRule(order, nodes, weights)


def gaussian_expectation(fn, rule, breakpoints=(), degree_hint=0):
    """``E[fn(Z)]`` for Z standard normal.

    Without breakpoints the Gauss-Hermite ``rule`` is applied directly. With
    breakpoints the real line is split at them and each piece is integrated
    against the Gaussian density with composite Gauss-Legendre panels; the two
    unbounded pieces are cut where the density (times the oscillating factor
    of degree ``degree_hint``) is below double precision.
    """
    if not breakpoints:
        return rule.expect(fn)
    bps = sorted(float(b) for b in breakpoints)
    reach = math.sqrt(4 * max(degree_hint, rule.order // 2) + 2) + 12.0
    edges = [min(bps[0], 0.0) - reach] + bps + [max(bps[-1], 0.0) + reach]
    gl_x, gl_w = np.polynomial.legendre.leggauss(_PANEL_NODES)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        n_panels = max(1, math.ceil((hi - lo) / _PANEL_WIDTH))
        panel_edges = np.linspace(lo, hi, n_panels + 1)
        half = 0.5 * np.diff(panel_edges)
        mid = 0.5 * (panel_edges[:-1] + panel_edges[1:])
        x = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
        w = (half[:, None] * gl_w[None, :]).ravel()
        dens = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        total += float(np.dot(w * dens, fn(x)))
    return total


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HermiteSeries:
    """Finite Hermite expansion ``f(x) = sum_k coeffs[k] h_k(x)``."""

    coeffs: np.ndarray
    breakpoints: tuple = field(default=(), init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if c.size - 1 > MAX_DEGREE:
            raise DomainError(f"series degree exceeds {MAX_DEGREE}")
        if not np.all(np.isfinite(c)):
            raise DomainError("Hermite coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self):
        return self.coeffs.size - 1

    def coeff(self, k):
        """``c_k``, zero beyond the stored degree."""
        return float(self.coeffs[k]) if 0 <= k <= self.degree else 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        hm, hk = np.zeros_like(x), np.ones_like(x)
        for k, c in enumerate(self.coeffs):
            if c != 0.0:
                out = out + c * hk
            hm, hk = hk, (x * hk - math.sqrt(k) * hm) / math.sqrt(k + 1)
        return out

    def padded(self, length):
        c = np.zeros(max(length, self.coeffs.size))
        c[: self.coeffs.size] = self.coeffs
        return HermiteSeries(c)

    def to_dict(self):
        return {"variant": "hermite-series", "coeffs": [float(c) for c in self.coeffs]}

    def __eq__(self, other):
        return isinstance(other, HermiteSeries) and np.array_equal(self.coeffs, other.coeffs)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PolynomialNonlinearity:
    """``f(x) = sum_m a_m x^m`` given by monomial coefficients."""

    coeffs: np.ndarray
    breakpoints: tuple = field(default=(), init=False, repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if c.size == 0:
            c = np.zeros(1)
        if c.size - 1 > MAX_DEGREE:
            raise DomainError(f"polynomial degree exceeds {MAX_DEGREE}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self):
        return self.coeffs.size - 1

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coeffs)

    def to_dict(self):
        return {"variant": "monomial-polynomial", "coeffs": [float(c) for c in self.coeffs]}


def _relu(x):
    return np.maximum(x, 0.0)


_NAMED = {
    # name: (function, breakpoints, growth constant C with |f| <= C|x|^C off the breakpoints)
    "relu": (_relu, (0.0,), 1.0),
    "sign": (np.sign, (0.0,), 1.0),
    "abs": (np.abs, (0.0,), 1.0),
    "tanh": (np.tanh, (), 1.0),
}


@dataclass(frozen=True)
class NamedNonlinearity:
    """One of the built-in nonlinearities: relu, sign, abs, tanh."""

    name: str

    def __post_init__(self):
        if self.name not in _NAMED:
            raise DomainError(f"unknown named nonlinearity {self.name!r}; choose from {sorted(_NAMED)}")

    @property
    def breakpoints(self):
        return _NAMED[self.name][1]

    @property
    def growth(self):
        return _NAMED[self.name][2]

    def __call__(self, x):
        return _NAMED[self.name][0](np.asarray(x, dtype=float))

    def to_dict(self):
        return {"variant": "named", "name": self.name}


@dataclass(frozen=True, eq=False)
class PiecewiseNonlinearity:
    """Piecewise-continuous nonlinearity from sampled pieces.

    ``breakpoints`` are ``alpha_1 < ... < alpha_K``; ``pieces`` holds K+1
    pairs of sample arrays ``(x, y)``, linearly interpolated inside each piece.
    Beyond the outermost samples the function follows the declared monomial
    tails ``left_tail`` / ``right_tail``; without a declared tail the last
    sample value is held constant. ``growth`` is the declared constant C in
    ``|f(x)| <= C |x|^C`` outside ``[alpha_1, alpha_K]``.
    """

    breakpoints: tuple
    pieces: tuple
    left_tail: tuple | None = None
    right_tail: tuple | None = None
    growth: float = 1.0

    def __post_init__(self):
        bps = tuple(float(b) for b in self.breakpoints)
        if any(b >= a for b, a in zip(bps, bps[1:])):
            raise DomainError("breakpoints must be strictly increasing")
        if len(self.pieces) != len(bps) + 1:
            raise DomainError(f"expected {len(bps) + 1} pieces for {len(bps)} breakpoints")
        pieces = []
        for xs, ys in self.pieces:
            xs = np.asarray(xs, dtype=float)
            ys = np.asarray(ys, dtype=float)
            if xs.ndim != 1 or xs.shape != ys.shape or xs.size == 0:
                raise DomainError("each piece needs matching non-empty 1-d x and y samples")
            if np.any(np.diff(xs) <= 0):
                raise DomainError("piece sample locations must be strictly increasing")
            if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
                raise DomainError("piece samples must be finite")
            pieces.append((xs, ys))
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "pieces", tuple(pieces))
        for name in ("left_tail", "right_tail"):
            tail = getattr(self, name)
            if tail is not None:
                object.__setattr__(self, name, tuple(float(t) for t in tail))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right")
        out = np.empty_like(x)
        last = len(self.pieces) - 1
        for p, (xs, ys) in enumerate(self.pieces):
            mask = idx == p
            if not np.any(mask):
                continue
            xp = x[mask]
            vals = np.interp(xp, xs, ys)
            if p == 0 and self.left_tail is not None:
                beyond = xp < xs[0]
                vals[beyond] = np.polynomial.polynomial.polyval(xp[beyond], self.left_tail)
            if p == last and self.right_tail is not None:
                beyond = xp > xs[-1]
                vals[beyond] = np.polynomial.polynomial.polyval(xp[beyond], self.right_tail)
            out[mask] = vals
        return out

    def to_dict(self):
        d = {
            "variant": "piecewise-table",
            "breakpoints": list(self.breakpoints),
            "pieces": [{"x": [float(v) for v in xs], "y": [float(v) for v in ys]} for xs, ys in self.pieces],
            "growth": float(self.growth),
        }
        if self.left_tail is not None:
            d["left_tail"] = list(self.left_tail)
        if self.right_tail is not None:
            d["right_tail"] = list(self.right_tail)
        return d


_VARIANT_KEYS = {
    "hermite-series": {"coeffs"},
    "monomial-polynomial": {"coeffs"},
    "named": {"name"},
    "piecewise-table": {"breakpoints", "pieces", "left_tail", "right_tail", "growth"},
}


def nonlinearity_from_dict(d):
    """Build a nonlinearity from its JSON object form (tag ``variant``)."""
    if not isinstance(d, dict) or "variant" not in d:
        raise DomainError("nonlinearity must be an object with a 'variant' tag")
    variant = d["variant"]
    if variant not in _VARIANT_KEYS:
        raise DomainError(f"unknown variant {variant!r}")
    extra = set(d) - _VARIANT_KEYS[variant] - {"variant"}
    if extra:
        raise DomainError(f"unexpected keys for {variant}: {sorted(extra)}")
    if variant == "hermite-series":
        return HermiteSeries([float(c) for c in d["coeffs"]])
    if variant == "monomial-polynomial":
        return PolynomialNonlinearity([float(c) for c in d["coeffs"]])
    if variant == "named":
        return NamedNonlinearity(d["name"])
    pieces = tuple((p["x"], p["y"]) for p in d["pieces"])
    return PiecewiseNonlinearity(
        breakpoints=tuple(d["breakpoints"]),
        pieces=pieces,
        left_tail=d.get("left_tail"),
        right_tail=d.get("right_tail"),
        growth=float(d.get("growth", 1.0)),
    )


def nonlinearity_to_json(spec):
    return dumps(spec.to_dict())


def nonlinearity_from_json(text):
    return nonlinearity_from_dict(json.loads(text))


def satisfies_growth(spec, C, grid=None):
    """Check ``|f(x)| <= C |x|^C`` on a grid outside the outermost breakpoints."""
    if grid is None:
        grid = np.concatenate([-np.logspace(0, 2, 200), np.logspace(0, 2, 200)])
    grid = np.asarray(grid, dtype=float)
    bps = spec.breakpoints
    if bps:
        grid = grid[(grid < min(bps)) | (grid > max(bps))]
    grid = grid[np.abs(grid) >= 1.0]
    return bool(np.all(np.abs(spec(grid)) <= C * np.abs(grid) ** C))


# ---------------------------------------------------------------------------
# Hermite coefficients
# ---------------------------------------------------------------------------


def poly_to_hermite(monomial_coeffs):
    """Exact change of basis from monomials to normalized Hermite polynomials.

    Uses ``x^n = sum_j n! / (2^j j! (n-2j)!) H_{n-2j}(x)`` with integer
    arithmetic for the combinatorial factors, then ``H_m = sqrt(m!) h_m``.
    """
    a = [float(v) for v in np.asarray(monomial_coeffs, dtype=float).ravel()]
    if not a:
        a = [0.0]
    n_max = len(a) - 1
    if n_max > MAX_DEGREE:
        raise DomainError(f"polynomial degree exceeds {MAX_DEGREE}")
    # monic coefficients accumulated exactly as rationals times each a_n
    monic = [Fraction(0)] * (n_max + 1)
    for n, an in enumerate(a):
        if an == 0.0:
            continue
        fa = Fraction(an)
        for j in range(n // 2 + 1):
            m = n - 2 * j
            monic[m] += fa * Fraction(math.factorial(n), (2**j) * math.factorial(j) * math.factorial(m))
    coeffs = [float(monic[m]) * math.sqrt(math.factorial(m)) for m in range(n_max + 1)]
    return HermiteSeries(coeffs)


def hermite_to_poly(series):
    """Monomial coefficients of a Hermite series (inverse of :func:`poly_to_hermite`)."""
    out = np.zeros(series.degree + 1)
    for k, c in enumerate(series.coeffs):
        if c == 0.0:
            continue
        mono = np.polynomial.hermite_e.herme2poly(np.eye(k + 1)[k])
        out[: k + 1] += c / math.sqrt(math.factorial(k)) * mono
    return out


def _required_order(k_max):
    return 2 * k_max + 8


def coeffs_by_quadrature(spec, K_max, rule=None):
    """Hermite coefficients ``c_k = E[f(Z) h_k(Z)]`` for ``k = 0..K_max``."""
    K_max = _check_degree(K_max)
    if rule is None:
        rule = gauss_hermite_rule(max(_required_order(K_max), 40))
    if rule.order < _required_order(K_max):
        raise PreconditionError(
            f"quadrature order {rule.order} too low for K_max={K_max}; need >= {_required_order(K_max)}"
        )
    coeffs = [
        gaussian_expectation(lambda x, k=k: spec(x) * h_all(k, x)[k], rule, spec.breakpoints, degree_hint=k)
        for k in range(K_max + 1)
    ]
    return HermiteSeries(coeffs)


def sigma_sq(series):
    """Sum of squared Hermite coefficients."""
    c = np.asarray(series.coeffs if isinstance(series, HermiteSeries) else series, dtype=float)
    return float(np.sum(c * c))


def gaussian_second_moment(spec, rule=None):
    """``E[f(Z)^2]``; exact for Hermite series via Parseval.

    Plain callables are accepted and treated as smooth (no breakpoints).
    """
    if isinstance(spec, HermiteSeries):
        return sigma_sq(spec)
    if rule is None:
        rule = gauss_hermite_rule(200)
    return gaussian_expectation(lambda x: spec(x) ** 2, rule, getattr(spec, "breakpoints", ()))


def truncation_tolerance(eta, eps):
    """Tail mass ``eta^4 eps^2 / 64`` below which truncating at degree L keeps
    the Stieltjes transform within ``eps`` at ``Im z = eta``."""
    return eta**4 * eps**2 / 64.0


def approximate(spec, L, rule=None):
    """Degree-L polynomial surrogate whose top coefficient carries the tail mass.

    Returns ``(c_0, ..., c_{L-1}, c_hat)`` with
    ``c_hat = sqrt(sigma^2 - sum_{k<L} c_k^2)`` so the total squared mass
    equals ``sigma^2 = E[f(Z)^2]``.
    """
    L = _check_degree(L)
    if L < 1:
        raise DomainError("L must be at least 1")
    if isinstance(spec, HermiteSeries):
        head = spec.padded(L).coeffs[:L]
        sigma2 = sigma_sq(spec)
    else:
        if rule is None:
            rule = gauss_hermite_rule(max(_required_order(L), 200))
        head = coeffs_by_quadrature(spec, L - 1, rule).coeffs if L - 1 >= 0 else np.zeros(0)
        sigma2 = gaussian_second_moment(spec, rule)
    deficit = sigma2 - float(np.sum(head * head))
    if deficit < -1e-8:
        raise ComputationError(f"sigma^2 is below the truncated sum by {-deficit:.3g}")
    c_hat = math.sqrt(max(deficit, 0.0))
    return HermiteSeries(np.append(head, c_hat))

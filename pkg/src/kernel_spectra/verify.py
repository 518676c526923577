"""Numerical checks of the exact resolvent identities and of the
inequality-type structure (Ward bounds, error-matrix sizes, moment limits)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ComputationError, PreconditionError
from .hermite import (
    HermiteSeries,
    PolynomialNonlinearity,
    coeffs_by_quadrature,
    gaussian_second_moment,
    poly_to_hermite,
)
from .models import (
    DataDistribution,
    _entries,
    build_A,
    build_A_tilde,
    build_B_full,
    build_B_tilde_full,
    build_H,
    overlap,
    tuple_sums,
)
from .spectra import eigs, stieltjes
from .theory import ceil_ell, parse_ell

MAX_DENSE_SIZE = 400

IDENTITY_NAMES = (
    "minor_offdiagonal",  # G^(i)_{mu nu} = G_{mu nu} - G_{mu i} G_{i nu} / G_ii
    "row_expansion",  # G_{i mu} = -G_ii sum_a U_{a i} G^(i)_{a mu}
    "schur_complement",  # G_ii = (-z - D_ii - U_i^T G^(i)_M U_i)^{-1}
    "gm_plus_t",  # G_M + T = T U G_N U^T T  (and for every single-index minor)
    "gm_entry_expansion",  # (G_M + T)_{mu nu} = -T_mu sum_j G_jj sum_a U_{mu j} U_{a j} G^(j)_{a nu}
)


@dataclass
class IdentityReport:
    deviations: dict
    tol: float
    instance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v < self.tol for v in self.deviations.values())

    @property
    def max_deviation(self):
        return max(self.deviations.values())

    def to_dict(self):
        return {
            "instance": self.instance,
            "tol": self.tol,
            "deviations": dict(self.deviations),
            "passed": self.passed,
        }


def _inv(H):
    try:
        return np.linalg.inv(H)
    except np.linalg.LinAlgError as exc:
        raise ComputationError("singular linearization matrix") from exc


def check_resolvent_identities(lin, z, tol=1e-9):
    """Evaluate both sides of the five resolvent identities.

    Every minor ``G^(i)`` is obtained by inverting ``H`` with row and column
    ``i`` removed, never through the update formula under test.
    """
    M, N = lin.M, lin.N
    if M + N > MAX_DENSE_SIZE:
        raise PreconditionError(f"M + N = {M + N} exceeds the dense limit {MAX_DENSE_SIZE}")
    z = complex(z)
    H = build_H(lin, z)
    G = _inv(H)
    U, T, D = lin.U, lin.T_diag, lin.D_diag
    GM = G[:M, :M]
    GN = G[M:, M:]

    dev = dict.fromkeys(IDENTITY_NAMES, 0.0)

    # identity (G_M + T) = T U G_N U^T T without exclusion
    rhs = (T[:, None] * U) @ GN @ (U.T * T[None, :])
    dev["gm_plus_t"] = float(np.max(np.abs(GM + np.diag(T) - rhs)))

    entry_rhs = np.zeros((M, M), dtype=complex)
    for i in range(N):
        keep = np.r_[0 : M + i, M + i + 1 : M + N]
        Gi = _inv(H[np.ix_(keep, keep)])
        GiM = Gi[:M, :M]
        GiN = Gi[M:, M:]
        gii = G[M + i, M + i]
        col_i = G[:M, M + i]
        row_i = G[M + i, :M]

        minor = GM - np.outer(col_i, row_i) / gii
        dev["minor_offdiagonal"] = max(dev["minor_offdiagonal"], float(np.max(np.abs(GiM - minor))))

        Ui = U[:, i]
        expansion = -gii * (Ui @ GiM)
        dev["row_expansion"] = max(dev["row_expansion"], float(np.max(np.abs(row_i - expansion))))

        q = Ui @ (GiM + np.diag(T)) @ Ui
        schur_a = 1.0 / (-z - q)
        schur_b = 1.0 / (-z - D[i] - Ui @ GiM @ Ui)
        dev["schur_complement"] = max(
            dev["schur_complement"], float(abs(gii - schur_a)), float(abs(gii - schur_b))
        )

        Ux = np.delete(U, i, axis=1)
        rhs_i = (T[:, None] * Ux) @ GiN @ (Ux.T * T[None, :])
        dev["gm_plus_t"] = max(dev["gm_plus_t"], float(np.max(np.abs(GiM + np.diag(T) - rhs_i))))

        entry_rhs += gii * np.outer(Ui, Ui @ GiM)

    entry_rhs = -T[:, None] * entry_rhs
    dev["gm_entry_expansion"] = float(np.max(np.abs(GM + np.diag(T) - entry_rhs)))

    instance = {"M": M, "N": N, "d": lin.d, "z_re": z.real, "z_im": z.imag}
    return IdentityReport(dev, tol, instance)


def _gm_plus_t(lin, z):
    H = build_H(lin, complex(z))
    G = _inv(H)
    return G[: lin.M, : lin.M] + np.diag(lin.T_diag)


def check_partial_ward(lin, z, k1, k2, t, sample_mu=20, seed=0):
    """Largest normalized partial Ward ratio over sampled ``mu`` of degree ``k1``.

    For each sampled ``mu`` the ratio is
    ``eta sum_{nu in S} |(G_M+T)_{mu nu}|^2 / (Im G_{mu mu} d^{max(-t, ell-k2)})``
    with ``S`` the degree-``k2`` tuples of overlap ``t`` with ``mu``.
    A diagnostic: the theory bounds this ratio by ``d^eps`` only.
    """
    if t > min(k1, k2) or t < 0:
        raise PreconditionError("overlap t must lie in [0, min(k1, k2)]")
    rows1 = lin.degree_rows(k1)
    rows2 = lin.degree_rows(k2)
    if rows1.size == 0 or rows2.size == 0:
        raise PreconditionError(f"degree blocks {k1} and {k2} must be present")
    z = complex(z)
    eta = z.imag
    GT = _gm_plus_t(lin, z)
    rng = np.random.default_rng(seed)
    mus = rows1 if rows1.size <= sample_mu else np.sort(rng.choice(rows1, sample_mu, replace=False))
    scale = float(lin.d) ** max(-t, float(lin.ell) - k2)
    worst = 0.0
    for mu in mus:
        tup = lin.index[mu][1]
        S = [nu for nu in rows2 if overlap(tup, lin.index[nu][1]) == t]
        if not S:
            continue
        im_diag = GT[mu, mu].imag
        ratio = eta * float(np.sum(np.abs(GT[mu, S]) ** 2)) / (im_diag * scale)
        worst = max(worst, ratio)
    return worst


def check_full_ward(lin, z, sample_mu=20, seed=0):
    """Largest ``eta sum_nu |(G_M+T)_{mu nu}|^2 / Im G_{mu mu}`` over sampled ``mu``."""
    z = complex(z)
    GT = _gm_plus_t(lin, z)
    rng = np.random.default_rng(seed)
    rows = np.arange(lin.M)
    mus = rows if rows.size <= sample_mu else np.sort(rng.choice(rows, sample_mu, replace=False))
    sums = np.sum(np.abs(GT[mus]) ** 2, axis=1)
    return float(np.max(z.imag * sums / GT[mus, mus].imag))


# ---------------------------------------------------------------------------
# Error matrices
# ---------------------------------------------------------------------------


def low_rank_split(X, series, ell):
    """Split ``B_full - B`` into a low-rank part and a diagonal remainder.

    The low-rank part keeps the degree ``k < ceil(ell)`` tuple sums including
    the diagonal; the remainder cancels that diagonal, so
    ``E_lr + E_frob == B_full - B``.
    """
    Xe = _entries(X)
    d, N = Xe.shape
    k_top = ceil_ell(ell) - 1
    E_lr = np.zeros((N, N))
    k_hi = min(k_top, series.degree)
    if k_hi >= 0:
        S = tuple_sums(Xe, max(k_hi, 0))
        for k in range(0, k_hi + 1):
            c = series.coeff(k)
            if c != 0.0:
                E_lr += c * math.sqrt(math.factorial(k)) / d ** (k / 2) * S[k]
    E_lr /= math.sqrt(N)
    E_frob = -np.diag(np.diag(E_lr))
    return E_lr, E_frob


def rank_bound(d, ell):
    """Number of index tuples of degree below ``ceil(ell)``."""
    return sum(math.comb(d, k) for k in range(ceil_ell(ell)))


def _check_series_matches(f, series):
    if isinstance(f, PolynomialNonlinearity):
        ref = poly_to_hermite(f.coeffs)
    elif isinstance(f, HermiteSeries):
        ref = f
    else:
        return
    L = max(ref.degree, series.degree)
    quad = coeffs_by_quadrature(f, L)
    if np.max(np.abs(quad.coeffs - series.padded(L + 1).coeffs)) > 1e-6:
        raise PreconditionError("series does not match the Hermite coefficients of f")


def error_norms(X, f, series, ell):
    """Frobenius norms of the successive error matrices linking A to B."""
    ell = parse_ell(ell)
    _check_series_matches(f, series)
    Xe = _entries(X)
    d, N = Xe.shape
    A = build_A(Xe, f)
    At = build_A_tilde(Xe, f)
    Btf = build_B_tilde_full(Xe, series)
    Bf = build_B_full(Xe, series)
    _, E_frob = low_rank_split(Xe, series, ell)
    return {
        "frob_A_Atilde": float(np.linalg.norm(A - At)),
        "frob_Atilde_Btildefull": float(np.linalg.norm(At - Btf)),
        "frob_Btildefull_Bfull": float(np.linalg.norm(Btf - Bf)),
        "rank_bound_lr": rank_bound(d, ell),
        "frob_E_frob": float(np.linalg.norm(E_frob)),
        "N": N,
        "d": d,
    }


# ---------------------------------------------------------------------------
# Gaussian moment limit
# ---------------------------------------------------------------------------

_MC_CHUNK = 8192


def check_gauss_moment(g, dist, d, n_samples, seed, chunk=_MC_CHUNK):
    """Monte Carlo ``E[g(<X_1,X_2>/sqrt(d))^2]`` against ``E[g(Z)^2]``.

    Returns ``(mc_value, gauss_value, |gap|)``.
    """
    if n_samples < 10_000:
        raise PreconditionError("n_samples must be at least 1e4")
    if isinstance(dist, str):
        dist = DataDistribution(dist)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    total = 0.0
    done = 0
    sq_d = math.sqrt(d)
    while done < n_samples:
        n = min(chunk, n_samples - done)
        X1 = dist.draw(rng, (d, n))
        X2 = dist.draw(rng, (d, n))
        x = np.sum(X1 * X2, axis=0) / sq_d
        total += float(np.sum(np.asarray(g(x), dtype=float) ** 2))
        done += n
    mc = total / n_samples
    gauss = gaussian_second_moment(g)
    return mc, gauss, abs(mc - gauss)


# ---------------------------------------------------------------------------
# Perturbation bounds for Stieltjes transforms
# ---------------------------------------------------------------------------

RANK_CONSTANT = 4.0


def stieltjes_perturbation(H1, H2, z, C=RANK_CONSTANT, rank_tol=1e-9):
    """Compare ``|s_1(z) - s_2(z)|`` with its Frobenius and rank bounds.

    Returns a dict with the observed gap, both bounds and whether each holds.
    ``C = 4`` exceeds the interlacing constant ``pi``.
    """
    H1 = np.asarray(H1, dtype=float)
    H2 = np.asarray(H2, dtype=float)
    if H1.shape != H2.shape or H1.shape[0] != H1.shape[1]:
        raise PreconditionError("need two square matrices of equal size")
    z = complex(z)
    if not z.imag > 0:
        raise PreconditionError("z must lie in the upper half plane")
    N = H1.shape[0]
    eta = z.imag
    gap = abs(stieltjes(eigs(H1), z) - stieltjes(eigs(H2), z))
    diff = H1 - H2
    frob_bound = float(np.linalg.norm(diff)) / (math.sqrt(N) * eta**2)
    rank = int(np.linalg.matrix_rank(diff, tol=rank_tol * max(1.0, float(np.max(np.abs(diff))))))
    rank_bound_value = C * rank / (N * eta)
    return {
        "gap": gap,
        "frob_bound": frob_bound,
        "rank": rank,
        "rank_bound": rank_bound_value,
        "frob_holds": gap <= frob_bound * (1 + 1e-12),
        "rank_holds": gap <= rank_bound_value * (1 + 1e-12),
    }

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_spectra.exceptions import PreconditionError
from kernel_spectra.hermite import HermiteSeries, NamedNonlinearity, PolynomialNonlinearity
from kernel_spectra.models import DataDistribution, ModelParams, build_B, build_B_full, build_UTD, overlap, sample_X
from kernel_spectra.verify import (
    IDENTITY_NAMES,
    check_full_ward,
    check_gauss_moment,
    check_partial_ward,
    check_resolvent_identities,
    error_norms,
    low_rank_split,
    rank_bound,
    stieltjes_perturbation,
)

GAUSS = DataDistribution("gaussian")
SPIKY = DataDistribution("discrete", (-2.0, 0.0, 2.0), (0.125, 0.75, 0.125))


def lin_for(d, N, seed, coeffs=(0, 1, 1), ell=1, dist=GAUSS):
    return build_UTD(sample_X(dist, ModelParams(d, N), seed), HermiteSeries(coeffs), ell)


class TestResolventIdentities:
    @pytest.mark.parametrize("z", [1j, 2 + 0.5j])
    def test_example(self, z):
        rep = check_resolvent_identities(lin_for(6, 8, 0), z, tol=1e-9)
        assert rep.passed
        assert set(rep.deviations) == set(IDENTITY_NAMES)
        assert rep.max_deviation < 1e-10

    def test_floor_tolerance_fails_cleanly(self):
        rep = check_resolvent_identities(lin_for(6, 8, 0), 1j, tol=1e-16)
        assert not rep.passed
        d = rep.to_dict()
        assert d["passed"] is False and d["tol"] == 1e-16
        assert all(v >= 0 for v in d["deviations"].values())

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("shape", [(6, 8), (7, 10), (8, 12)])
    def test_instance_matrix(self, seed, shape):
        d, N = shape
        lin = lin_for(d, N, seed, coeffs=(0.2, 1, 0.8, 0.5), ell=1, dist=DataDistribution("rademacher"))
        for z in (1j, 2 + 0.5j):
            assert check_resolvent_identities(lin, z).passed

    def test_b_consistency(self):
        for seed in range(3):
            X = sample_X(GAUSS, ModelParams(7, 11), seed)
            s = HermiteSeries([0, 0.5, 1, -0.4])
            np.testing.assert_allclose(build_UTD(X, s, 1).B(), build_B(X, s, 1), atol=1e-10)


class TestWard:
    def test_overlap_convention(self):
        assert overlap((2, 4, 5), (3, 5)) == 1

    def test_empty_set_is_zero(self):
        lin = lin_for(5, 6, 0, coeffs=(0, 1), ell=1)
        with pytest.raises(PreconditionError):
            check_partial_ward(lin, 1j, 1, 2, 1)
        with pytest.raises(PreconditionError):
            check_partial_ward(lin, 1j, 1, 1, 2)
        # d = 2 leaves no degree-2 tuple overlapping another in exactly 0 indices
        lin2 = lin_for(2, 4, 0, coeffs=(0, 0, 1), ell=1)
        assert check_partial_ward(lin2, 1j, 2, 2, 0) == 0

    def test_band_across_d(self):
        ratios = [check_partial_ward(lin_for(d, d, d), 1j, 2, 2, 1, sample_mu=10) for d in (8, 16, 32)]
        assert all(r > 0 for r in ratios)
        assert max(ratios) / min(ratios) <= 10

    def test_full_ward_bounded(self):
        for d in (8, 16):
            r = check_full_ward(lin_for(d, d, d), 1j, sample_mu=10)
            assert 0 < r < 10


class TestErrorNorms:
    def test_constant(self):
        X = sample_X(GAUSS, ModelParams(20, 30), 0)
        f = PolynomialNonlinearity([1.7])
        assert error_norms(X, f, HermiteSeries([1.7]), "1")["frob_A_Atilde"] == 0

    def test_decrease_for_h1(self):
        s = HermiteSeries([0, 1])
        vals = []
        for d in (100, 400, 1600):
            X = sample_X(GAUSS, ModelParams(d, d), d)
            vals.append(error_norms(X, s, s, "1")["frob_A_Atilde"] / math.sqrt(d))
        for a, b in zip(vals, vals[1:]):
            assert a / b >= 1.5

    def test_scaling_constant(self):
        # every norm divided by sqrt(N/d) stays under the constant seen at the smallest d
        s = HermiteSeries([0, 1, 1])
        keys = ("frob_A_Atilde", "frob_Atilde_Btildefull", "frob_Btildefull_Bfull")
        rows = []
        for d in (100, 400, 1600):
            X = sample_X(GAUSS, ModelParams(d, d), d + 1)
            r = error_norms(X, s, s, "1")
            rows.append([r[k] / math.sqrt(r["N"] / r["d"]) for k in keys])
        base = rows[0]
        for row in rows[1:]:
            for v, c in zip(row, base):
                assert v <= 1.5 * c

    def test_rank_bound(self):
        assert rank_bound(10, "2") == 11
        assert rank_bound(10, "3/2") == 11
        assert rank_bound(10, "1") == 1

    @pytest.mark.parametrize("ell", ["1", "3/2", "2"])
    def test_split_identity(self, ell):
        X = sample_X(SPIKY, ModelParams(6, 9), 4)
        s = HermiteSeries([0.4, -0.7, 1.1, 0.3])
        from kernel_spectra.theory import parse_ell
        L = parse_ell(ell)
        E_lr, E_frob = low_rank_split(X, s, L)
        np.testing.assert_allclose(E_lr + E_frob, build_B_full(X, s) - build_B(X, s, L), atol=1e-10)
        assert np.linalg.matrix_rank(E_lr) <= rank_bound(6, L)
        assert np.count_nonzero(E_frob - np.diag(np.diag(E_frob))) == 0

    def test_series_mismatch(self):
        X = sample_X(GAUSS, ModelParams(5, 6), 0)
        with pytest.raises(PreconditionError):
            error_norms(X, PolynomialNonlinearity([0, 0, 1]), HermiteSeries([0, 0, 1]), "1")


class TestGaussMoment:
    @pytest.mark.parametrize("dist", ["gaussian", "rademacher", SPIKY], ids=["gaussian", "rademacher", "spiky"])
    def test_identity(self, dist):
        n = 20_000
        mc, gauss, _ = check_gauss_moment(PolynomialNonlinearity([0, 1]), dist, 30, n, 1)
        assert gauss == pytest.approx(1)
        assert abs(mc - 1) < 3 * math.sqrt(2) / math.sqrt(n)

    def test_square_gaussian(self):
        mc, gauss, gap = check_gauss_moment(PolynomialNonlinearity([0, 0, 1]), "gaussian", 200, 100_000, 0)
        assert gauss == pytest.approx(3)
        assert gap < 0.1

    def test_small_n(self):
        with pytest.raises(PreconditionError):
            check_gauss_moment(NamedNonlinearity("relu"), "gaussian", 10, 9999, 0)

    def test_reproducible(self):
        a = check_gauss_moment(NamedNonlinearity("tanh"), "uniform", 12, 10_000, 5)
        assert a == check_gauss_moment(NamedNonlinearity("tanh"), "uniform", 12, 10_000, 5)

    def test_relu_rademacher_within_noise(self):
        # relu(x)^2 has mean E[x^2]/2 for every symmetric law, so at finite d
        # the gap is Monte Carlo noise only; it must sit inside that noise.
        n = 100_000
        sd = math.sqrt(1.5 - 0.25)
        for d in (25, 100, 400):
            gaps = [check_gauss_moment(NamedNonlinearity("relu"), "rademacher", d, n, s)[2] for s in range(3)]
            assert np.median(gaps) < 5 * sd / math.sqrt(n)

    @pytest.mark.slow
    def test_trend_on_heavy_fourth_moment(self):
        # E[(x/sqrt d)^4] = 3 + (m4^2 - 3)/d with m4 = 4, so the gap shrinks like 13/d
        g = PolynomialNonlinearity([0, 0, 1])
        med = []
        for d in (25, 100, 400):
            med.append(float(np.median([check_gauss_moment(g, SPIKY, d, 200_000, s)[2] for s in range(3)])))
        assert med[0] > med[1] > med[2]
        assert med[0] == pytest.approx(13 / 25, abs=0.15)


square_sym = st.integers(2, 12).flatmap(
    lambda n: st.tuples(st.just(n), st.integers(0, 2**31), st.floats(0.05, 3.0), st.floats(-5, 5))
)


class TestPerturbation:
    @given(square_sym)
    def test_frobenius_and_rank_one(self, args):
        n, seed, eta, E = args
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n, n))
        H1 = (a + a.T) / 2
        v = rng.standard_normal(n)
        H2 = H1 + rng.normal(scale=3) * np.outer(v, v)
        r = stieltjes_perturbation(H1, H2, complex(E, eta))
        assert r["frob_holds"]
        assert r["rank"] <= 1
        assert r["rank_holds"]

    @given(square_sym)
    def test_frobenius_general(self, args):
        n, seed, eta, E = args
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, n, n))
        r = stieltjes_perturbation((a + a.T) / 2, (b + b.T) / 2, complex(E, eta))
        assert r["frob_holds"]
        assert r["rank_holds"]

    def test_errors(self):
        with pytest.raises(PreconditionError):
            stieltjes_perturbation(np.eye(2), np.eye(3), 1j)
        with pytest.raises(PreconditionError):
            stieltjes_perturbation(np.eye(2), np.eye(2), 1.0)

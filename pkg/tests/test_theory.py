import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_spectra.exceptions import DomainError
from kernel_spectra.hermite import HermiteSeries
from kernel_spectra.theory import (
    ComplexGrid,
    ceil_ell,
    count_upper_roots,
    d_tau_grid,
    density,
    ell_c,
    equation_defect,
    exponents,
    format_ell,
    gammas,
    parse_ell,
    residual,
    semicircle_cdf,
    semicircle_m,
    solve_m,
    stability_bound,
)

GOLDEN = (math.sqrt(5) - 1) / 2

gamma_st = st.tuples(st.floats(0, 4), st.floats(0, 4), st.floats(0, 4))
z_st = st.tuples(st.floats(-10, 10), st.floats(0.1, 10)).map(lambda t: complex(*t))


class TestExponent:
    def test_parse(self):
        assert parse_ell("3/2") == Fraction(3, 2)
        assert parse_ell("6/4") == Fraction(3, 2)
        assert parse_ell(2) == 2
        for bad in ("1.5", 1.5, "0", "-1/2", "a/b", "1/0", True):
            with pytest.raises(DomainError):
                parse_ell(bad)

    def test_helpers(self):
        assert ceil_ell("3/2") == 2 and ceil_ell(2) == 2
        assert ell_c(2) == 3 and ell_c("3/2") == 2 and ell_c("1/2") == 1
        assert format_ell(Fraction(4, 2)) == "2" and format_ell("3/2") == "3/2"

    @pytest.mark.parametrize(
        "ell, expected",
        [
            ("2", (Fraction(1, 2), Fraction(1, 2), Fraction(1, 2), 3)),
            ("3/2", (Fraction(1, 4), Fraction(1, 4), Fraction(1, 4), 2)),
            ("1/2", (Fraction(1, 4), Fraction(1, 4), Fraction(1, 4), 1)),
        ],
    )
    def test_exponents(self, ell, expected):
        assert tuple(exponents(ell)) == expected

    @given(st.integers(1, 40), st.integers(1, 12))
    def test_exponent_invariants(self, num, den):
        ex = exponents(Fraction(num, den))
        assert ex.p_ell == min(ex.q_ell, ex.r_ell)
        assert (ex.p_ell == Fraction(1, 2)) == (Fraction(num, den).denominator == 1)
        for v in ex[:3]:
            assert 0 <= v <= Fraction(1, 2)


class TestGammas:
    def test_examples(self):
        assert gammas(HermiteSeries([0, 1]), 1, 4.0) == pytest.approx((1, 2, 0))
        assert gammas(HermiteSeries([0, 0, 1]), "3/2", 1.0) == pytest.approx((0, 0, 1))
        assert gammas(HermiteSeries([1, 2, 3, 4]), 1, 1.0) == pytest.approx((4, 2, 25))

    def test_short_series_gives_zero(self):
        assert gammas(HermiteSeries([0, 1]), 2, 1.0) == (0.0, 0.0, 0.0)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.integers(1, 4), st.floats(0.1, 10))
    def test_a_zero_iff_b_zero(self, c, ell, kappa):
        g = gammas(HermiteSeries(c), ell, kappa)
        assert (g.gamma_a == 0) == (g.gamma_b == 0)
        assert g.gamma_c >= 0 and all(map(math.isfinite, g))

    def test_kappa_must_be_positive(self):
        with pytest.raises(DomainError):
            gammas(HermiteSeries([0, 1]), 1, 0.0)


class TestSolver:
    def test_examples(self):
        assert solve_m(2j, (0, 0, 0)) == pytest.approx(0.5j, abs=1e-15)
        assert solve_m(1j, (0, 0, 1)) == pytest.approx(GOLDEN * 1j, abs=1e-12)

    def test_mp_example_against_quadratic_formula(self):
        # (z+1) m^2 + (z+1) m + 1 = 0 at z = i, upper root
        a = b = 1 + 1j
        r = np.roots([a, b, 1])
        expected = r[np.argmax(r.imag)]
        m = solve_m(1j, (1, 1, 0))
        assert m == pytest.approx(expected, abs=1e-13)
        assert m == pytest.approx(-0.107 + 0.636j, abs=1e-3)

    def test_domain(self):
        with pytest.raises(DomainError):
            solve_m(1.0 + 0j, (0, 0, 1))
        with pytest.raises(DomainError):
            solve_m(np.array([1j, -1j]), (0, 0, 1))

    @given(z_st, gamma_st)
    def test_residual_and_herglotz(self, z, g):
        m = solve_m(z, g)
        assert m.imag > 0
        assert abs(m) <= 1 / z.imag * (1 + 1e-12)
        assert abs(equation_defect(m, z, g)) < 1e-12

    def test_unique_upper_root(self):
        rng = np.random.default_rng(5)
        z = rng.uniform(-10, 10, 500) + 1j * rng.uniform(0.1, 10, 500)
        for zi, gi in zip(z, rng.uniform(0, 4, (500, 3))):
            assert count_upper_roots(zi, gi) == 1

    def test_vectorized_matches_scalar(self):
        grid = d_tau_grid(0.2, 10, 5).as_array()
        g = (0.7, 1.3, 0.4)
        vec = solve_m(grid, g)
        np.testing.assert_array_equal(vec, [solve_m(z, g) for z in grid])

    def test_semicircle_agreement(self):
        grid = d_tau_grid(0.2, 10, 5).as_array()
        for gc in (0.25, 1.0, 3.0):
            np.testing.assert_allclose(solve_m(grid, (0, 0, gc)), semicircle_m(grid, gc), atol=1e-10)

    def test_far_field(self):
        g = (1.0, 1.5, 0.8)
        errs = [abs(solve_m(1j * y, g) + 1 / (1j * y)) for y in (10, 20, 40)]
        for a, b in zip(errs, errs[1:]):
            assert 6 <= a / b <= 10

    def test_stability_machinery(self):
        grid = d_tau_grid(0.2, 6, 4).as_array()
        for g in [(0, 0, 1), (1, 1, 0), (2, -1.2, 0.5), (0.3, 0.2, 3)]:
            m = solve_m(grid, g)
            for z, mm in zip(grid, m):
                b = stability_bound(abs(residual(mm, z, g)), z.imag)
                assert b.applicable and b.value < 1e-10


class TestResidual:
    def test_examples(self):
        assert abs(residual(solve_m(1j, (0, 0, 1)), 1j, (0, 0, 1))) < 1e-12
        assert residual(-1 / 2j, 2j, (0, 0, 0)) == 0
        assert residual(0.5j, 1j, (0, 0, 1)) == pytest.approx(-0.5j)

    def test_singular(self):
        with pytest.raises(DomainError):
            residual(0.0, 1j, (0, 0, 1))
        with pytest.raises(DomainError):
            residual(-1.0, 1j, (1, 1, 0))


class TestStabilityBound:
    def test_examples(self):
        assert stability_bound(0.01, 1.0) == (pytest.approx(0.04), True)
        assert stability_bound(0, 0.5).value == 0
        assert stability_bound(0.3, 1.0).applicable is True
        assert stability_bound(0.6, 1.0).applicable is False
        with pytest.raises(DomainError):
            stability_bound(0.1, 0.0)


class TestSemicircle:
    def test_examples(self):
        assert semicircle_m(1j, 1) == pytest.approx(GOLDEN * 1j, abs=1e-12)
        assert semicircle_m(2j, 1) == pytest.approx(1j * (math.sqrt(8) - 2) / 2, abs=1e-12)
        assert abs(semicircle_m(100j, 1) + 1 / 100j) < 1e-3
        with pytest.raises(DomainError):
            semicircle_m(1j, 0)

    def test_cdf(self):
        assert semicircle_cdf(0.0, 1.0) == pytest.approx(0.5)
        assert semicircle_cdf(-5, 1.0) == 0 and semicircle_cdf(5, 1.0) == 1


class TestDensity:
    def test_examples(self):
        assert density((0, 0, 1), [0.0])[0] == pytest.approx(1 / math.pi, rel=1e-5)
        assert density((0, 0, 1), [3.0], 1e-6)[0] < 1e-3
        E = np.array([-0.1, 0.0, 0.3])
        eta = 1e-4
        np.testing.assert_allclose(density((0, 0, 0), E, eta), eta / (math.pi * (E**2 + eta**2)), rtol=1e-12)

    @pytest.mark.parametrize("g, radius", [((0, 0, 1), 2.0), ((1, math.sqrt(2), 1), 7.0), ((0, 0, 0.5), 1.5)])
    def test_mass(self, g, radius):
        E = np.linspace(-radius - 1, radius + 1, 4001)
        rho = density(g, E, 1e-6)
        assert np.trapezoid(rho, E) == pytest.approx(1.0, abs=2e-2)

    def test_eta_range(self):
        with pytest.raises(DomainError):
            density((0, 0, 1), [0.0], 1e-2)


class TestGrid:
    def test_membership(self):
        grid = d_tau_grid(0.5)
        assert len(grid) == 25
        for z in grid:
            assert 0.5 <= z.imag <= 2 and abs(z.real) <= 2
        with pytest.raises(DomainError):
            ComplexGrid(0.5, (3 + 1j,))

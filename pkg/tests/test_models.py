import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kernel_spectra.exceptions import DomainError, ResourceError
from kernel_spectra.hermite import H_eval, HermiteSeries, NamedNonlinearity, PolynomialNonlinearity
from kernel_spectra.models import (
    DataDistribution,
    ModelParams,
    brute_force_tuple_kernel,
    build_A,
    build_A_tilde,
    build_B,
    build_B_full,
    build_B_tilde_full,
    build_H,
    build_UTD,
    elementary_symmetric,
    normalized_columns,
    overlap,
    sample_X,
)

SQUARE = PolynomialNonlinearity([0, 0, 1])
DISTS = ["gaussian", "rademacher", "uniform", DataDistribution("discrete", (-2.0, 0.0, 2.0), (0.125, 0.75, 0.125))]


def small_X(d, N, seed, dist="gaussian"):
    return sample_X(DataDistribution(dist) if isinstance(dist, str) else dist, ModelParams(d, N), seed)


class TestDistributions:
    def test_discrete_validation(self):
        with pytest.raises(DomainError):
            DataDistribution("discrete", (0.0, 1.0), (0.5, 0.5))
        with pytest.raises(DomainError):
            DataDistribution("cauchy")
        with pytest.raises(DomainError):
            DataDistribution("gaussian", (1.0,), (1.0,))

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: getattr(d, "variant", d))
    def test_sampled_moments(self, dist):
        dist = DataDistribution(dist) if isinstance(dist, str) else dist
        x = sample_X(dist, ModelParams(500, 400), 11).entries.ravel()
        n = x.size
        for k in range(1, 5):
            sd = math.sqrt(dist.moment(2 * k) - dist.moment(k) ** 2)
            assert abs(np.mean(x**k) - dist.moment(k)) <= 5 * sd / math.sqrt(n) + 1e-12

    def test_rademacher_support(self):
        X = small_X(30, 20, 3, "rademacher").entries
        assert set(np.unique(X)) == {-1.0, 1.0}

    def test_gaussian_clt(self):
        X = small_X(1000, 1000, 4).entries
        assert abs(X.mean()) < 0.004
        assert abs(X.var() - 1) < 0.01

    def test_determinism(self):
        a = small_X(17, 9, 123).entries
        b = small_X(17, 9, 123).entries
        assert np.array_equal(a, b)
        assert not np.array_equal(a, small_X(17, 9, 124).entries)
        assert not a.flags.writeable

    def test_columns_do_not_depend_on_N(self):
        a = small_X(12, 5, 9).entries
        b = small_X(12, 8, 9).entries
        assert np.array_equal(a, b[:, :5])


class TestParams:
    def test_kappa(self):
        p = ModelParams.from_kappa(120, 1.0, "3/2")
        assert p.N == round(120**1.5)
        assert abs(p.N - 120**1.5) < 1
        assert p.kappa == pytest.approx(p.N / 120**1.5)
        with pytest.raises(DomainError):
            ModelParams(0, 4)
        with pytest.raises(DomainError):
            ModelParams(4, 1)


class TestKernels:
    def test_hand_computed(self):
        X = np.ones((4, 2))
        A = build_A(X, SQUARE)
        assert A[0, 1] == pytest.approx(4 / math.sqrt(2))
        assert A[0, 0] == 0
        At = build_A_tilde(X, SQUARE)
        assert At[0, 1] == pytest.approx(4 / math.sqrt(2))

    def test_zero_function(self):
        X = small_X(5, 6, 0).entries
        assert np.array_equal(build_A(X, PolynomialNonlinearity([0.0])), np.zeros((6, 6)))

    def test_zero_column(self):
        X = np.array(small_X(5, 6, 0).entries)
        X[:, 2] = 0
        At = build_A_tilde(X, NamedNonlinearity("tanh"))
        assert np.all(At[2] == 0) and np.all(At[:, 2] == 0)
        _, ok = normalized_columns(X)
        assert ok.tolist() == [True, True, False, True, True, True]

    def test_constant_tilde(self):
        X = np.array(small_X(5, 6, 0).entries)
        X[:, 0] = 0
        At = build_A_tilde(X, PolynomialNonlinearity([3.0]))
        off = ~np.eye(6, dtype=bool)
        off[0, :] = off[:, 0] = False
        np.testing.assert_allclose(At[off], 3 / math.sqrt(6))

    @pytest.mark.parametrize("seed", range(4))
    def test_symmetry_zero_diagonal(self, seed):
        X = small_X(9, 11, seed, "uniform")
        s = HermiteSeries([0.5, 1.0, -0.7, 0.3])
        for M in (build_A(X, NamedNonlinearity("relu")), build_A_tilde(X, NamedNonlinearity("relu")),
                  build_B(X, s, 1), build_B_full(X, s), build_B_tilde_full(X, s)):
            assert np.array_equal(M, M.T)
            assert np.all(np.diag(M) == 0)


class TestElementarySymmetric:
    def test_example(self):
        np.testing.assert_allclose(elementary_symmetric([1, 2, 3], 3), [1, 6, 11, 6])
        assert elementary_symmetric(np.arange(5.0), 0)[0] == 1
        np.testing.assert_allclose(elementary_symmetric([1, 2], 4), [1, 3, 2, 0, 0])

    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=10), st.integers(0, 5))
    def test_matches_enumeration(self, w, k):
        e = elementary_symmetric(w, k)
        for j in range(k + 1):
            brute = sum(math.prod(c) for c in itertools.combinations(w, j))
            assert e[j] == pytest.approx(brute, abs=1e-9 * (1 + 4**j))

    def test_degree_guard(self):
        with pytest.raises(DomainError):
            elementary_symmetric([1.0], 17)


class TestMainTerm:
    def test_hand_computed(self):
        B = build_B(np.ones((2, 2)), HermiteSeries([0, 1]), 1)
        assert B[0, 1] == pytest.approx(1.0)

    def test_short_series_is_zero(self):
        X = small_X(6, 5, 1)
        assert np.array_equal(build_B(X, HermiteSeries([1, 2]), 2), np.zeros((5, 5)))

    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force(self, seed):
        X = small_X(6, 4, seed)
        s = HermiteSeries([0, 0, 1, 1])
        np.testing.assert_allclose(build_B(X, s, 2), brute_force_tuple_kernel(X, s, 2), atol=1e-12)
        s_full = HermiteSeries([0.4, -0.3, 1, 1])
        np.testing.assert_allclose(build_B_full(X, s_full), brute_force_tuple_kernel(X, s_full, 0), atol=1e-12)
        low = brute_force_tuple_kernel(X, HermiteSeries([0.4, -0.3]), 0)
        np.testing.assert_allclose(build_B_full(X, s_full) - build_B(X, s_full, 2), low, atol=1e-12)

    def test_constant_series(self):
        X = small_X(4, 5, 2)
        Bf = build_B_full(X, HermiteSeries([2.0]))
        off = ~np.eye(5, dtype=bool)
        np.testing.assert_allclose(Bf[off], 2 / math.sqrt(5))

    def test_high_support_equals_B(self):
        X = small_X(7, 6, 3)
        s = HermiteSeries([0, 0, 0.5, 1.2])
        assert np.array_equal(build_B_full(X, s), build_B(X, s, 2))


def _link_medians(k, ds, pairs=100):
    # H_k(<X_i,X_j>/sqrt d) against d^{-k/2} k! e_k(X_i * X_j) on normalized samples
    out = []
    for d in ds:
        X = sample_X(DataDistribution("gaussian"), ModelParams(d, 2 * pairs), 77 + d).entries
        Xt, _ = normalized_columns(X)
        a, b = Xt[:, :pairs], Xt[:, pairs:]
        x = np.sum(a * b, axis=0) / math.sqrt(d)
        e = elementary_symmetric(a * b, k)[k]
        out.append(float(np.median(np.abs(H_eval(k, x) - math.factorial(k) * e / d ** (k / 2)))))
    return out


@pytest.mark.parametrize("k", [2, 3])
def test_hermite_tuple_sum_link_shrinks(k):
    med = _link_medians(k, (50, 200, 800))
    for a, b in zip(med, med[1:]):
        assert a / b >= 1.5


class TestLinearization:
    def test_sizes_and_T(self):
        X = small_X(5, 7, 0)
        lin = build_UTD(X, HermiteSeries([0, 0, 1]), 2)
        assert lin.M == 10
        X = small_X(10, 100, 0)
        lin = build_UTD(X, HermiteSeries([0, 0, 1]), 2)
        np.testing.assert_allclose(lin.T_diag, math.sqrt(2))

    def test_skips_zero_blocks(self):
        lin = build_UTD(small_X(6, 5, 0), HermiteSeries([0, 1, 0, 1]), 1)
        assert lin.M == 6 + 20
        assert {k for k, _ in lin.index} == {1, 3}

    @pytest.mark.parametrize("seed", range(20))
    def test_cross_path(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(3, 11))
        N = int(rng.integers(2, 17))
        L = int(rng.integers(1, 5))
        ell = int(rng.integers(1, L + 1))
        s = HermiteSeries(rng.normal(size=L + 1))
        X = small_X(d, N, seed)
        lin = build_UTD(X, s, ell)
        B = build_B(X, s, ell)
        np.testing.assert_allclose(lin.B(), B, atol=1e-10)
        assert np.all(np.abs(np.diag(lin.B())) < 1e-10)

    def test_example_cross_path(self):
        X = small_X(8, 12, 5)
        s = HermiteSeries([0, 0, 1, 1])
        np.testing.assert_allclose(build_UTD(X, s, 2).B(), build_B(X, s, 2), atol=1e-10)

    def test_resource_guard(self):
        with pytest.raises(ResourceError):
            build_UTD(np.ones((200, 3)), HermiteSeries([0, 0, 0, 1]), 1)

    def test_H_blocks_and_resolvent(self):
        X = small_X(6, 8, 2)
        s = HermiteSeries([0, 1, 1])
        lin = build_UTD(X, s, 1)
        z = 0.3 + 0.7j
        H = build_H(lin, z)
        M = lin.M
        np.testing.assert_allclose(H[:M, :M], -np.diag(1 / lin.T_diag))
        np.testing.assert_allclose(H[M:, M:], np.diag(-z - lin.D_diag))
        G = np.linalg.inv(H)
        GN = np.linalg.inv(build_B(X, s, 1) - z * np.eye(8))
        np.testing.assert_allclose(G[M:, M:], GN, atol=1e-10)
        with pytest.raises(DomainError):
            build_H(lin, 1.0)

    def test_overlap(self):
        assert overlap((2, 4, 5), (3, 5)) == 1
        assert overlap((1, 2), (1, 2)) == 2
        assert overlap((), (1,)) == 0

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from idfsim.errors import InvalidArgument
from idfsim.gaussmath import (RngStream, binary_kl, cholesky, sample_mvn, sample_std_normal,
                              std_normal_cdf, std_normal_quantile, validate_covariance)


def test_cdf_examples():
    assert std_normal_cdf(0.0) == 0.5
    assert abs(std_normal_cdf(1.0) - float(oracles.normal_cdf(1.0))) <= 1e-12
    assert abs(std_normal_cdf(1.0) - 0.841345) < 1e-6
    assert abs(std_normal_cdf(-1.0) - (1 - std_normal_cdf(1.0))) <= 1e-15


@pytest.mark.parametrize("x", [-8.0, -5.5, -2.0, -0.3, 0.7, 3.1, 6.0])
def test_cdf_against_quadrature(x):
    assert abs(std_normal_cdf(x) - float(oracles.normal_cdf(x))) <= 1e-12


def test_cdf_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(InvalidArgument):
            std_normal_cdf(bad)


def test_cdf_monotone_on_dense_grid():
    # Strict where one grid step moves Phi by more than an ulp of 1.
    x = np.linspace(-8, 5, 20001)
    assert np.all(np.diff(std_normal_cdf(x)) > 0)
    assert np.all(np.diff(std_normal_cdf(np.linspace(-40, 40, 20001))) >= 0)


def test_quantile_examples():
    assert std_normal_quantile(0.5) == 0.0
    assert std_normal_quantile(0.0) == -math.inf
    assert std_normal_quantile(1.0) == math.inf
    ref = float(oracles.normal_quantile(0.25))
    assert abs(std_normal_quantile(0.25) - ref) < 1e-11
    assert abs(std_normal_quantile(0.25) + 0.674490) < 1e-6


@pytest.mark.parametrize("p", [1e-10, 1e-6, 0.01, 0.3, 0.6, 0.975, 1 - 1e-8])
def test_quantile_against_bisection(p):
    assert abs(std_normal_quantile(p) - float(oracles.normal_quantile(p))) < 1e-9


def test_quantile_rejects_outside_unit_interval():
    for bad in (-1e-12, 1.0000001, math.nan):
        with pytest.raises(InvalidArgument):
            std_normal_quantile(bad)


def test_round_trip_in_x():
    x = np.linspace(-6, 6, 4001)
    assert np.max(np.abs(std_normal_quantile(std_normal_cdf(x)) - x)) <= 1e-8


def test_round_trip_in_p():
    p = np.concatenate([np.logspace(-10, np.log10(0.5), 3000),
                        1 - np.logspace(-10, np.log10(0.5), 3000)])
    assert np.max(np.abs(std_normal_cdf(std_normal_quantile(p)) - p)) <= 1e-9


def test_binary_kl_examples():
    assert binary_kl(0.3, 0.3) == 0.0
    assert abs(binary_kl(0.5, 0.25) - float(oracles.binary_kl_bits(0.5, 0.25))) < 1e-14
    assert abs(binary_kl(0.25, 1 / 256) - float(oracles.binary_kl_bits(0.25, 1 / 256))) < 1e-13
    assert abs(binary_kl(0.5, 0.25) - 0.207519) < 1e-6
    assert abs(binary_kl(0.25, 1 / 256) - 1.19296) < 1e-5


def test_binary_kl_edges_and_errors():
    assert abs(binary_kl(0.0, 0.25) - math.log2(4 / 3)) < 1e-15
    assert abs(binary_kl(1.0, 0.25) - 2.0) < 1e-15
    assert abs(binary_kl(0.5, 0.25, base=math.e) - 0.207519 * math.log(2)) < 1e-6
    for mu in (0.0, 1.0):
        with pytest.raises(InvalidArgument):
            binary_kl(0.5, mu)
    with pytest.raises(InvalidArgument):
        binary_kl(1.5, 0.5)


def test_binary_kl_nonnegative_with_equality_only_on_diagonal():
    grid = np.linspace(0.01, 0.99, 50)
    for lam in grid:
        for mu in grid:
            d = binary_kl(lam, mu)
            assert d >= 0
            assert (d == 0) == (lam == mu)


def test_kl_dominates_weakened_exponent():
    for M in (2, 3, 4, 16, 256, 4096):
        for lam in np.linspace(0.001, 0.999, 400):
            assert binary_kl(lam, 1.0 / M) >= lam * math.log2(M) - 1


@given(st.floats(0.0, 1.0), st.floats(1e-6, 1 - 1e-6))
def test_kl_nonnegative_property(lam, mu):
    assert binary_kl(lam, mu) >= 0


def test_cholesky_examples():
    assert np.array_equal(cholesky(np.eye(2)), np.eye(2))
    assert np.allclose(cholesky([[4, 0], [0, 9]]), [[2, 0], [0, 3]])
    s = np.array([[1, 0.5], [0.5, 1]])
    a = cholesky(s)
    assert np.allclose(a, np.tril(a))
    assert np.linalg.norm(a @ a.T - s) / np.linalg.norm(s) <= 1e-10


def test_cholesky_semidefinite_and_errors():
    s = np.array([[1.0, 1.0, 0], [1.0, 1.0, 0], [0, 0, 0]])
    a = cholesky(s)
    assert np.linalg.norm(a @ a.T - s) <= 1e-12
    with pytest.raises(InvalidArgument):
        cholesky([[1, 0.5], [0.4, 1]])
    with pytest.raises(InvalidArgument):
        cholesky([[1, 2], [2, 1]])
    with pytest.raises(InvalidArgument):
        validate_covariance([[1, 0, 0], [0, 1, 0]])


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_cholesky_round_trip_property(k, seed):
    g = np.random.default_rng(seed).standard_normal((k, k + 2))
    s = g @ g.T
    a = cholesky(s)
    assert np.linalg.norm(a @ a.T - s) <= 1e-10 * np.linalg.norm(s)


def test_sample_std_normal_moments_and_determinism():
    x = sample_std_normal(RngStream(1), 10**6)
    assert abs(x.mean()) <= 0.004
    assert abs(x.var() - 1) <= 0.006
    assert sample_std_normal(RngStream(9, 3)) == sample_std_normal(RngStream(9, 3))
    assert sample_std_normal(RngStream(9, 3)) != sample_std_normal(RngStream(9, 4))


def test_sample_std_normal_ks():
    from scipy import stats

    x = sample_std_normal(RngStream(2), 10**5)
    d = stats.kstest(x, stats.norm.cdf).statistic
    assert d < 1.628 / math.sqrt(10**5)


def test_substreams_do_not_depend_on_parent_consumption():
    a = RngStream(5)
    b = RngStream(5)
    b.gen.random(1000)
    assert np.array_equal(a.substream(3, 1).gen.random(4), b.substream(3, 1).gen.random(4))
    assert not np.array_equal(a.substream(3).gen.random(4), a.substream(4).gen.random(4))
    f = a.fresh()
    assert np.array_equal(f.gen.random(3), RngStream(5).gen.random(3))


def test_sample_mvn_moments():
    mu = np.array([1.0, -1.0])
    s = np.array([[1.0, 0.5], [0.5, 1.0]])
    x = sample_mvn(mu, s, RngStream(3), 10**5)
    n = x.shape[0]
    assert np.all(np.abs(x.mean(axis=0) - mu) <= 3 * np.sqrt(np.diag(s) / n))
    c = np.cov(x.T)
    # Var of a sample covariance entry: (s_ij^2 + s_ii s_jj) / n.
    se = np.sqrt((s ** 2 + np.outer(np.diag(s), np.diag(s))) / n)
    assert np.all(np.abs(c - s) <= 3 * se)


def test_sample_mvn_degenerate_and_errors():
    x = sample_mvn([2.0, 5.0], [[1.0, 0.0], [0.0, 0.0]], RngStream(4), 1000)
    assert np.all(x[:, 1] == 5.0)
    z = sample_mvn([0.0, 0.0], np.eye(2), RngStream(4), 10**5)
    assert abs(np.corrcoef(z.T)[0, 1]) < 3 / math.sqrt(10**5)
    with pytest.raises(InvalidArgument):
        sample_mvn([0.0], np.eye(2), RngStream(4))

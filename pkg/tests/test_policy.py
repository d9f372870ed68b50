import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgqaoa.policy import (SIGMA_FLOOR, CorrelatedGaussianPolicy, DiagonalGaussianPolicy, initial_diagonal_policy,
                           policy_from_dict, score_gradient_correlated, score_gradient_diagonal, truncated_lognormal,
                           truncated_normal)
from oracles.fd import central_difference, random_correlated, random_diagonal, relative_error


def test_diagonal_log_prob_peak():
    pol = DiagonalGaussianPolicy([0.0, 0.0], [1.0, 1.0])
    assert pol.log_prob([0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    pol = DiagonalGaussianPolicy([0.3, 0.2, 0.1, 0.5], [0.1, 0.2, 0.3, 0.4])
    expected = -np.sum(np.log(pol.std * math.sqrt(2 * math.pi)))
    assert pol.log_prob(pol.mean) == pytest.approx(expected, abs=1e-12)
    c = 2.5
    scaled = DiagonalGaussianPolicy(pol.mean, c * pol.std)
    assert scaled.log_prob(pol.mean) - pol.log_prob(pol.mean) == pytest.approx(-4 * math.log(c), abs=1e-12)


def test_diagonal_score_examples():
    pol = DiagonalGaussianPolicy([0.3, 0.2, 0.1, 0.5], [0.1, 0.2, 0.3, 0.4])
    g_mean, g_std = score_gradient_diagonal(pol, pol.mean)
    assert np.array_equal(g_mean, np.zeros(4))
    assert np.allclose(g_std, -1 / pol.std)


def test_diagonal_score_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(30):
        pol = random_diagonal(rng, 6)
        x = pol.mean + pol.std * rng.normal(size=6) * 1.5
        g_mean, g_std = pol.score(x)
        fd_mean = central_difference(lambda m: DiagonalGaussianPolicy(m, pol.std).log_prob(x), pol.mean)
        fd_std = central_difference(lambda s: DiagonalGaussianPolicy(pol.mean, s).log_prob(x), pol.std)
        assert relative_error(g_mean, fd_mean) <= 1e-6
        assert relative_error(g_std, fd_std) <= 1e-6


def test_sample_determinism_and_floor():
    pol = DiagonalGaussianPolicy(np.arange(8) * 0.1, np.full(8, 0.05))
    a, za = pol.sample(16, np.random.default_rng(3))
    b, zb = pol.sample(16, np.random.default_rng(3))
    assert np.array_equal(a, b) and np.array_equal(za, zb)
    assert np.array_equal(a, pol.mean + pol.std * za)
    tight = DiagonalGaussianPolicy(np.ones(8), np.full(8, 1e-9))
    assert np.all(tight.std == SIGMA_FLOOR)
    x, _ = tight.sample(100, np.random.default_rng(4))
    assert np.abs(x - 1).max() <= 5 * SIGMA_FLOOR * math.sqrt(8)


def test_projection_counts_clamps():
    pol = DiagonalGaussianPolicy([0.0, 0.0], [0.1, 0.1], std_param="direct")
    pol.set_parameters([np.zeros(2), np.array([-0.5, 0.2])])
    assert pol.std[0] == SIGMA_FLOOR and pol.std[1] == 0.2
    assert pol.project() == 0
    with pytest.raises(ValueError):
        DiagonalGaussianPolicy([0.0, 0.0], [0.1, -0.1])
    with pytest.raises(ValueError):
        DiagonalGaussianPolicy([0.0, 0.0, 1.0], [0.1, 0.1, 0.1])


def test_log_std_parameters_roundtrip():
    pol = DiagonalGaussianPolicy([0.1, 0.2], [0.3, 0.4])
    params = pol.parameters()
    assert np.allclose(params[1], np.log([0.3, 0.4]))
    pol.set_parameters(params)
    assert np.allclose(pol.std, [0.3, 0.4], rtol=1e-15)


def test_weighted_score_chain_rule_for_log_std():
    rng = np.random.default_rng(5)
    pol = random_diagonal(rng, 4)
    x, _ = pol.sample(32, rng)
    w = rng.normal(size=32)
    direct = DiagonalGaussianPolicy(pol.mean, pol.std, std_param="direct")
    g_log = pol.weighted_score(x, w)[1]
    g_dir = direct.weighted_score(x, w)[1]
    assert np.allclose(g_log, g_dir * pol.std)


def test_correlated_identity_covariance():
    pol = CorrelatedGaussianPolicy(np.zeros(4), np.eye(4))
    x, _ = pol.sample(10**5, np.random.default_rng(6))
    assert np.abs(np.cov(x.T) - np.eye(4)).max() <= 0.02


def test_change_of_variable_consistency():
    rng = np.random.default_rng(7)
    for lower in (False, True):
        for _ in range(20):
            pol = random_correlated(rng, 6, lower)
            x, z = pol.sample(8, rng)
            assert np.allclose(pol.log_prob(x), pol.log_prob_latent(z), atol=1e-9, rtol=0)
            assert np.allclose(pol.latent(x), z, atol=1e-9)


def test_log_prob_integrates_to_one():
    rng = np.random.default_rng(8)
    pol = random_correlated(rng, 2, lower=False)
    r = 8 * np.sqrt(np.linalg.eigvalsh(pol.covariance).max())
    g = np.linspace(-r, r, 801)
    xx, yy = np.meshgrid(g + pol.mean[0], g + pol.mean[1], indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.exp(pol.log_prob(pts)).reshape(xx.shape)
    h = g[1] - g[0]
    assert abs(dens.sum() * h * h - 1) <= 1e-3


def test_correlated_score_examples():
    rng = np.random.default_rng(9)
    diag = random_diagonal(rng, 6)
    corr = CorrelatedGaussianPolicy.from_diagonal(diag, lower=True)
    assert np.array_equal(corr.covariance, np.diag(diag.std**2))
    x, _ = diag.sample(5, rng)
    g_mean, g_a = corr.score(x)
    d_mean, d_std = diag.score(x)
    assert np.allclose(g_mean, d_mean, rtol=1e-12, atol=0)
    assert np.allclose(np.diagonal(g_a, axis1=1, axis2=2), d_std, rtol=1e-12, atol=0)
    g0, _ = corr.score(corr.mean[None])
    assert np.array_equal(g0, np.zeros((1, 6)))


def test_correlated_score_matches_finite_differences():
    rng = np.random.default_rng(10)
    for lower in (False, True):
        for _ in range(20):
            pol = random_correlated(rng, 4, lower)
            x, _ = pol.sample(1, rng)
            g_mean, g_a = score_gradient_correlated(pol, x[0])
            fd_mean = central_difference(lambda m: CorrelatedGaussianPolicy(m, pol.transform, lower).log_prob(x[0]), pol.mean)
            fd_a = central_difference(lambda a: CorrelatedGaussianPolicy(pol.mean, a, False).log_prob(x[0]), pol.transform)
            if lower:
                fd_a = np.tril(fd_a)
                assert np.all(np.triu(g_a[0], 1) == 0)
            assert relative_error(g_mean[0], fd_mean) <= 1e-5
            assert relative_error(g_a[0], fd_a) <= 1e-5


def test_weighted_score_is_mean_of_scores():
    rng = np.random.default_rng(11)
    for lower in (False, True):
        pol = random_correlated(rng, 6, lower)
        x, _ = pol.sample(40, rng)
        w = rng.normal(size=40)
        g_mean, g_a = pol.score(x)
        ws = pol.weighted_score(x, w)
        assert np.allclose(ws[0], w @ g_mean / 40)
        assert np.allclose(ws[1], np.einsum("b,bij->ij", w, g_a) / 40)


def test_score_expectation_is_zero():
    rng = np.random.default_rng(12)
    for pol in (random_diagonal(rng, 4), random_correlated(rng, 4, lower=True)):
        x, _ = pol.sample(10**5, rng)
        for g in pol.score(x):
            g = g.reshape(g.shape[0], -1)
            se = g.std(axis=0) / np.sqrt(g.shape[0])
            keep = se > 0
            assert np.all(np.abs(g.mean(axis=0)[keep]) <= 4 * se[keep])


def test_lower_variant_causality():
    rng = np.random.default_rng(13)
    pol = random_correlated(rng, 6, lower=True)
    z = rng.normal(size=6)
    base = pol.mean + pol.transform @ z
    for j in range(6):
        dz = z.copy()
        dz[j] += 1.0
        moved = np.flatnonzero(pol.mean + pol.transform @ dz != base)
        assert moved.min() >= j


def test_lower_transform_stays_triangular():
    rng = np.random.default_rng(14)
    pol = random_correlated(rng, 4, lower=True)
    pol.set_parameters([pol.mean, rng.normal(size=(4, 4))])
    assert np.all(np.triu(pol.transform, 1) == 0)


def test_singular_transform_detected():
    pol = CorrelatedGaussianPolicy(np.zeros(2), [[1.0, 1.0], [1.0, 1.0]])
    assert pol.is_singular()
    with pytest.raises(np.linalg.LinAlgError):
        pol.log_prob([0.0, 0.0])
    assert not CorrelatedGaussianPolicy(np.zeros(30), 1e-4 * np.eye(30)).is_singular()


def test_checkpoint_roundtrip():
    rng = np.random.default_rng(15)
    for pol in (random_diagonal(rng, 4), random_correlated(rng, 4, True), random_correlated(rng, 4, False)):
        back = policy_from_dict(pol.to_dict())
        assert back.kind == pol.kind
        assert back.fingerprint() == pol.fingerprint()
    with pytest.raises(ValueError):
        policy_from_dict({"kind": "nope"})


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), loc=st.floats(-3, 3), scale=st.floats(0.01, 2))
def test_truncated_samplers_respect_bounds(seed, loc, scale):
    rng = np.random.default_rng(seed)
    x = truncated_normal(rng, loc, scale, 200)
    assert np.all(np.abs(x - loc) <= 2 * scale)
    y = truncated_lognormal(rng, loc, scale, 200)
    assert np.all(np.abs(np.log(y) - loc) <= 2 * scale * (1 + 1e-12))


def test_initial_policy_defaults():
    pol = initial_diagonal_policy(4, np.random.default_rng(16))
    assert pol.dim == 8
    assert np.all(np.abs(pol.mean - 0.5) <= 0.2)
    assert np.all(np.abs(np.log(pol.std) + 3) <= 0.2 + 1e-12)
    const = initial_diagonal_policy(3, np.random.default_rng(16), std_init="constant")
    assert np.all(const.std == 0.0024)
    with pytest.raises(ValueError):
        initial_diagonal_policy(0, np.random.default_rng(0))

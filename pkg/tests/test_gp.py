import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nestbo import benchfns as bf
from nestbo.gp import (
    Lookahead,
    NumericalError,
    SingularHessianError,
    condition,
    fantasy_power,
    fit_hyperparams,
    grad_belief,
    posterior_mean,
    posterior_var,
    scale_factor,
    scale_factor_from,
    DerivBelief,
)
from nestbo.kernel import KernelParams
from nestbo.oracle import brute_force_pi_g, brute_force_pi_h, fd_gradient, fd_hessian, make_stencil


def random_gp(rng, d, n, standardize=True):
    X = rng.uniform(0, 1, (n, d))
    y = np.sin(3 * X).sum(axis=1) + 0.1 * rng.normal(size=n)
    p = KernelParams(rng.uniform(0.5, 2), rng.uniform(0.2, 1.0, d), rng.uniform(1e-6, 1e-2))
    return condition(X, y, p, standardize=standardize)


def test_factor_and_weights():
    gp = random_gp(np.random.default_rng(0), 3, 12)
    K = gp.kxx()
    rec = gp.factor @ gp.factor.T
    assert np.linalg.norm(rec - K) / np.linalg.norm(K) < 1e-8
    ys = (gp.dataset.targets - gp.y_mean) / gp.y_scale
    np.testing.assert_allclose(K @ gp.weights, ys, rtol=1e-6, atol=1e-9)


def test_dataset_validation():
    p = KernelParams(1.0, [1.0], 0.0)
    with pytest.raises(ValueError):
        condition(np.zeros((2, 1)), [1.0], p)
    with pytest.raises(ValueError):
        condition(np.zeros((1, 1)), [np.nan], p)
    with pytest.raises(ValueError):
        condition(np.zeros((1, 2)), [1.0], p)


def test_prior_posterior():
    p = KernelParams(1.7, [0.5, 0.5], 0.0)
    gp = condition(np.zeros((0, 2)), [], p)
    assert posterior_mean(gp, [0.2, 0.3]) == 0.0
    assert posterior_var(gp, [0.2, 0.3]) == 1.7


def test_one_point_mean():
    p = KernelParams(1.0, [1.0], 0.0)
    gp = condition([[0.0]], [1.0], p)
    assert posterior_mean(gp, [1.0]) == pytest.approx(math.exp(-0.5), rel=1e-7)


def test_noiseless_interpolation():
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(6, 2))
    y = rng.normal(size=6)
    gp = condition(X, y, KernelParams(1.0, [0.4, 0.4], 0.0))
    for x, t in zip(X, y):
        assert abs(posterior_mean(gp, x) - t) < 1e-6


def test_empty_belief_prior_values():
    gp = condition(np.zeros((0, 2)), [], KernelParams(1.0, [1.0, 1.0], 0.0))
    b = grad_belief(gp, [0.1, -0.4])
    assert b.pi_g == 2.0 and b.pi_h == 8.0
    np.testing.assert_array_equal(b.mean_grad, 0.0)
    np.testing.assert_array_equal(b.mean_hess, 0.0)


def test_stencil_strictly_reduces_powers():
    p = KernelParams(1.0, [1.0, 1.0], 1e-8)
    st_ = make_stencil(np.zeros(2), 0.1)
    gp = condition(st_.points, np.zeros(st_.size), p)
    b = grad_belief(gp, np.zeros(2))
    assert b.pi_g < 2.0 and b.pi_h < 8.0


def test_belief_symmetric_and_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(10):
        gp = random_gp(rng, 3, 10)
        b = grad_belief(gp, rng.uniform(size=3))
        assert np.max(np.abs(b.mean_hess - b.mean_hess.T)) <= 1e-10
        assert b.pi_g >= 0 and b.pi_h >= 0


def test_mean_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(5):
        gp = random_gp(rng, 3, 10)
        x = rng.uniform(size=3)
        b = grad_belief(gp, x)
        h = 1e-4 * gp.params.lengthscales
        g = fd_gradient(lambda z: posterior_mean(gp, z), x, h)
        np.testing.assert_allclose(b.mean_grad, g, rtol=1e-5, atol=1e-6 * np.max(np.abs(g)))
        H = fd_hessian(lambda z: posterior_mean(gp, z), x, 1e-3 * gp.params.lengthscales)
        np.testing.assert_allclose(b.mean_hess, H, rtol=1e-4, atol=1e-4 * np.max(np.abs(H)))


def test_power_functions_match_brute_force():
    rng = np.random.default_rng(6)
    for d in (1, 2, 3):
        gp = random_gp(rng, d, 8)
        x = rng.uniform(size=d)
        b = grad_belief(gp, x)
        assert b.pi_h == pytest.approx(brute_force_pi_h(gp, x), rel=1e-8)
        assert b.pi_g == pytest.approx(brute_force_pi_g(gp, x), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-5, 5, allow_nan=False))
def test_translation_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    gp = random_gp(rng, 2, 7)
    x = rng.uniform(size=2)
    c = np.array([shift, -shift])
    gp2 = condition(gp.inputs + c, gp.dataset.targets, gp.params, standardize=True)
    b1, b2 = grad_belief(gp, x), grad_belief(gp2, x + c)
    np.testing.assert_allclose(b1.mean_grad, b2.mean_grad, atol=1e-10)
    np.testing.assert_allclose(b1.mean_hess, b2.mean_hess, atol=1e-10)
    assert abs(b1.pi_g - b2.pi_g) < 1e-10 and abs(b1.pi_h - b2.pi_h) < 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), b=st.integers(1, 5))
def test_fantasy_monotone(seed, b):
    rng = np.random.default_rng(seed)
    gp = random_gp(rng, 2, 6)
    x = rng.uniform(size=2)
    base = grad_belief(gp, x)
    pg, ph = fantasy_power(gp, x, rng.uniform(size=(b, 2)))
    assert pg <= base.pi_g + 1e-8 and ph <= base.pi_h + 1e-8


def test_fantasy_empty_and_duplicate():
    rng = np.random.default_rng(7)
    gp = random_gp(rng, 2, 6)
    x = rng.uniform(size=2)
    base = grad_belief(gp, x)
    assert fantasy_power(gp, x, np.zeros((0, 2))) == (base.pi_g, base.pi_h)
    pg, ph = fantasy_power(gp, x, gp.inputs[:1])
    assert pg <= base.pi_g + 1e-12 and ph <= base.pi_h + 1e-12


def test_lookahead_append_matches_full_conditioning():
    rng = np.random.default_rng(8)
    gp = random_gp(rng, 2, 5)
    x = rng.uniform(size=2)
    Z = rng.uniform(size=(3, 2))
    la = Lookahead(gp, x)
    for z in Z:
        la, _ = la.append(z)
    full = condition(np.vstack([gp.inputs, Z]), np.zeros(8), gp.params)
    ref = Lookahead(full, x)
    np.testing.assert_allclose(la.powers(), ref.powers(), rtol=1e-8)
    cand = la.candidate_powers(Z[:1])
    one = Lookahead(gp, x).append(Z[0])[0].powers()
    assert Lookahead(gp, x).candidate_powers(Z[:1])[0][0] == pytest.approx(one[0], rel=1e-10)
    assert cand[0].shape == (1,)


def test_scale_factor_examples():
    b = DerivBelief(np.array([2.0, 4.0]), np.diag([2.0, 4.0]), 0.0, 0.0)
    assert scale_factor(b) == pytest.approx(5.0)
    assert scale_factor_from(np.zeros(2), np.eye(2)) == 0.0
    assert scale_factor_from(np.array([3.0, 4.0]), np.eye(2)) == pytest.approx(25.0)
    with pytest.raises(SingularHessianError):
        scale_factor_from(np.ones(2), np.diag([1.0, 0.0]))


def test_fit_degenerate_and_deterministic():
    res = fit_hyperparams(np.array([[0.1], [0.7]]), [2.0, 2.0])
    assert res.status == "degenerate"
    rng = np.random.default_rng(9)
    X = rng.uniform(size=(15, 2))
    y = np.sin(4 * X[:, 0]) + X[:, 1]
    a = fit_hyperparams(X, y, restarts=1, rng=3)
    b = fit_hyperparams(X, y, restarts=1, rng=3)
    assert a.status == "ok"
    np.testing.assert_array_equal(a.params.lengthscales, b.params.lengthscales)
    assert a.params.noise_variance == b.params.noise_variance


def test_fit_recovers_lengthscale():
    # RFF draws approximate a unit SE prior with lengthscale 0.2
    ratios = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        f = bf.sample_rff(2, lengthscale=0.2, rng=rng)
        X = rng.uniform(size=(60, 2))
        y = np.array([f(x) for x in X]) + 1e-2 * rng.normal(size=60)
        ls = fit_hyperparams(X, y, restarts=3, rng=seed).params.lengthscales
        ratios.append(np.exp(np.mean(np.log(ls / 0.2))))
    assert 0.5 <= np.median(ratios) <= 2.0


def test_cholesky_failure_is_numerical_error():
    p = KernelParams(1.0, [1.0], 0.0)
    with pytest.raises(NumericalError):
        condition(np.zeros((3, 1)), [0.0, 1.0, 2.0], p, jitter=0.0)

import numpy as np
import pytest
from scipy.stats import qmc

from nestbo import benchfns as bf
from nestbo.acquisition import (
    AcqConfig,
    gi_value,
    greedy_batch,
    mc_nest_value,
    nest_value,
    plugin_scale,
    select_batch,
)
from nestbo.gp import Lookahead, condition, fit_hyperparams, grad_belief, scale_factor
from nestbo.kernel import KernelParams


def empty_gp(d=2):
    return condition(np.zeros((0, d)), [], KernelParams(1.0, np.ones(d), 1e-6))


def griewank_gp(seed, n=10):
    rng = np.random.default_rng(seed)
    X = qmc.Sobol(2, seed=rng).random(n)
    y = np.array([bf.griewank(x) for x in X])
    params = fit_hyperparams(X, y, restarts=2, rng=seed).params
    return condition(X, y, params, standardize=True), rng


def test_config_validation():
    with pytest.raises(ValueError):
        AcqConfig(scale_mode="bogus")
    with pytest.raises(ValueError):
        AcqConfig(scale_value=0.0)
    with pytest.raises(ValueError):
        AcqConfig(mc_samples=0)
    with pytest.raises(ValueError):
        AcqConfig(box_radius=1.5)
    AcqConfig(criterion="gi", scale_value=0.0)


def test_prior_values():
    gp = empty_gp()
    x = np.array([0.5, 0.5])
    assert nest_value(gp, x, np.zeros((0, 2)), 1.0) == pytest.approx(10.0)
    assert gi_value(gp, x, np.zeros((0, 2))) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        nest_value(gp, x, np.zeros((0, 2)), 0.0)


def test_small_scale_recovers_gi():
    gp, rng = griewank_gp(1)
    x = rng.uniform(size=2)
    Z = rng.uniform(size=(3, 2))
    assert nest_value(gp, x, Z, 1e-12) == pytest.approx(gi_value(gp, x, Z), rel=1e-9)


def test_values_monotone_in_pending_set():
    gp, rng = griewank_gp(2)
    x = rng.uniform(size=2)
    Z = rng.uniform(size=(5, 2))
    nv = [nest_value(gp, x, Z[:k], 1.0) for k in range(6)]
    gv = [gi_value(gp, x, Z[:k]) for k in range(6)]
    assert all(b <= a + 1e-12 for a, b in zip(nv, nv[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(gv, gv[1:]))


def test_mc_value():
    gp, rng = griewank_gp(3)
    x = rng.uniform(size=2)
    b = grad_belief(gp, x)
    plug = b.pi_g + scale_factor(b) * b.pi_h
    assert mc_nest_value(gp, x, np.zeros((0, 2))) == pytest.approx(plug, rel=1e-10)
    Z = rng.uniform(size=(2, 2))
    assert mc_nest_value(gp, x, Z, rng=5) == mc_nest_value(gp, x, Z, rng=5)


def test_plugin_value_matches_scale_factor():
    gp, rng = griewank_gp(4)
    x = rng.uniform(size=2)
    b = grad_belief(gp, x)
    s = plugin_scale(Lookahead(gp, x))
    assert s == pytest.approx(scale_factor(b), rel=1e-12)
    assert nest_value(gp, x, np.zeros((0, 2)), s) == pytest.approx(b.pi_g + s * b.pi_h, rel=1e-12)


def test_single_pick_reduces_prior_value():
    gp = empty_gp()
    x = np.array([0.5, 0.5])
    Z = select_batch(gp, x, 1, AcqConfig(), rng=0)
    assert nest_value(gp, x, Z, 1.0) < 10.0


@pytest.mark.parametrize("mode", ["fixed", "plugin", "monte_carlo"])
def test_batch_in_box_and_greedy_monotone(mode):
    gp, rng = griewank_gp(5)
    x = np.array([0.05, 0.6])
    cfg = AcqConfig(scale_mode=mode, mc_samples=8)
    Z, vals, _ = greedy_batch(gp, x, 4, cfg, rng=rng)
    assert Z.shape == (4, 2)
    assert np.all(Z >= np.maximum(x - 0.2, 0.0)) and np.all(Z <= np.minimum(x + 0.2, 1.0))
    if mode != "monte_carlo":
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_greedy_beats_random_and_picks_are_distinct():
    cfg = AcqConfig(scale_mode="fixed", scale_value=1.0)
    wins = 0
    for seed in range(50):
        gp, rng = griewank_gp(100 + seed)
        x = rng.uniform(0.2, 0.8, size=2)
        Z = select_batch(gp, x, 7, cfg, rng=rng)
        assert np.all(np.linalg.norm(np.diff(Z, axis=0), axis=1) > 1e-9)
        R = rng.uniform(x - 0.2, x + 0.2, size=(7, 2))
        wins += nest_value(gp, x, Z, 1.0) < nest_value(gp, x, R, 1.0)
    assert wins >= 45


def test_batch_deterministic():
    gp, _ = griewank_gp(6)
    x = np.array([0.3, 0.3])
    a = select_batch(gp, x, 3, AcqConfig(), rng=42)
    b = select_batch(gp, x, 3, AcqConfig(), rng=42)
    np.testing.assert_array_equal(a, b)

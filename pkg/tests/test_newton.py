import numpy as np
import pytest
from scipy.stats import qmc

from nestbo import benchfns as bf
from nestbo.gp import DerivBelief, condition, grad_belief, posterior_mean_batch
from nestbo.kernel import KernelParams
from nestbo.newton import (
    CONVERGED,
    FALLBACK,
    NEWTON,
    IterState,
    LoopConfig,
    armijo_linesearch,
    fit_and_condition,
    nest_bo_iterate,
    newton_direction,
    normalized_gradient,
    take_step,
)


def belief(g, H):
    return DerivBelief(np.asarray(g, float), np.asarray(H, float), 0.0, 0.0)


def test_direction_examples():
    v, kind = newton_direction(belief([2, 4], np.diag([2, 4])), [1, 1])
    np.testing.assert_allclose(v, [1, 1])
    assert kind == NEWTON
    _, kind = newton_direction(belief([1, 1], np.diag([-1, 1])), [1, 1])
    assert kind == FALLBACK
    g = np.array([0.3, -2.0])
    v, kind = newton_direction(belief(g, np.eye(2)), [1, 1])
    np.testing.assert_allclose(v, g)
    v, _ = newton_direction(belief([0, 0], np.eye(2)), [1, 1])
    np.testing.assert_array_equal(v, 0.0)


def test_fallback_normalization():
    g = np.array([1.0, 2.0])
    ls = np.array([0.5, 2.0])
    v = normalized_gradient(g, ls)
    lam = ls**2
    np.testing.assert_allclose(v, lam * g / np.sqrt(np.sum(lam * g * g)))
    assert g @ v > 0


def test_newton_direction_is_descent():
    rng = np.random.default_rng(0)
    for _ in range(50):
        A = rng.normal(size=(3, 3))
        H = A @ A.T + 0.1 * np.eye(3)
        g = rng.normal(size=3)
        v, kind = newton_direction(belief(g, H), np.ones(3))
        assert kind == NEWTON and g @ v > 0


def quadratic_gp():
    X = np.linspace(-0.3, 1.3, 25)[:, None]
    return condition(X, X[:, 0] ** 2, KernelParams(10.0, [1.0], 1e-10), jitter=1e-12)


def test_armijo_full_step_on_quadratic():
    gp = quadratic_gp()
    b = grad_belief(gp, [1.0])
    assert b.mean_grad[0] == pytest.approx(2.0, rel=1e-4)
    gamma = armijo_linesearch(gp, np.array([1.0]), np.array([1.0]), grad=b.mean_grad)
    assert gamma == 1.0


def test_armijo_uphill_exhausts():
    gp = quadratic_gp()
    x = np.array([0.5])
    gamma = armijo_linesearch(gp, x, np.array([-1.0]), max_steps=20)
    assert gamma == 0.5**19


def test_armijo_accepted_step_satisfies_condition():
    rng = np.random.default_rng(1)
    X = rng.uniform(size=(20, 2))
    y = np.array([bf.rosenbrock(4 * x - 2) for x in X])
    gp = fit_and_condition(X, y, None, 2, 0)
    for _ in range(10):
        x = rng.uniform(0.2, 0.8, 2)
        g = grad_belief(gp, x).mean_grad
        v = normalized_gradient(g, gp.params.lengthscales)
        gamma = armijo_linesearch(gp, x, v, grad=g)
        if gamma > 0.5**19:
            mu0, mu1 = posterior_mean_batch(gp, np.vstack([x, np.clip(x - gamma * v, 0, 1)]))
            assert mu1 <= mu0 - 1e-4 * gamma * (g @ v)


def test_armijo_rejects_bad_arguments():
    gp = quadratic_gp()
    with pytest.raises(ValueError):
        armijo_linesearch(gp, np.array([0.5]), np.array([0.0]))
    with pytest.raises(ValueError):
        armijo_linesearch(gp, np.array([0.5]), np.array([1.0]), shrink=1.0)


def test_full_newton_step_on_dense_quadratic():
    c = np.array([0.45, 0.6])
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    g1 = np.linspace(0, 1, 9)
    X = np.array([[a, b] for a in g1 for b in g1])
    y = np.einsum("ni,ij,nj->n", X - c, A, X - c)
    gp = condition(X, y, KernelParams(5.0, [1.5, 1.5], 1e-10), jitter=1e-12)
    cfg = LoopConfig(step_rule="fixed", step_size=1.0)
    for x in ([0.1, 0.1], [0.9, 0.2], [0.5, 0.95]):
        step, _ = take_step(gp, np.array(x), cfg)
        assert step.kind == NEWTON
        assert np.linalg.norm(step.new_iterate - c) < 1e-3


def sphere_setup(seed):
    spec = bf.make_spec("sphere", 2, bounds=np.tile([-4.0, 4.0], (2, 1)))
    lo, hi = spec.lower, spec.upper

    def objective(U):
        return np.array([bf.evaluate(spec, lo + u * (hi - lo)) for u in np.atleast_2d(U)])

    rng = np.random.default_rng(seed)
    x0 = (np.array([3.0, 3.0]) - lo) / (hi - lo)
    U0 = np.vstack([x0, qmc.Sobol(2, seed=rng).random(9)])
    gp = fit_and_condition(U0, objective(U0), None, 3, rng)
    return objective, IterState(x0, gp), rng


def test_one_iterate_decreases_sphere():
    wins = 0
    for seed in range(10):
        objective, state, rng = sphere_setup(seed)
        new, step, info = nest_bo_iterate(state, objective, LoopConfig(), rng)
        assert np.all((new.x >= 0) & (new.x <= 1))
        assert info.batch.shape == (3, 2)  # b = d picks plus the evaluated iterate
        wins += objective(new.x)[0] < objective(state.x)[0]
    assert wins >= 9


def test_zero_gradient_converges():
    gp = condition(np.zeros((0, 2)), [], KernelParams(1.0, [0.3, 0.3], 1e-4))
    state = IterState(np.array([0.4, 0.6]), gp)
    new, step, info = nest_bo_iterate(state, lambda U: np.zeros(len(U)), LoopConfig(), 0)
    assert step.kind == CONVERGED and new.converged
    np.testing.assert_array_equal(new.x, state.x)
    assert len(info.targets) == 2  # no iterate evaluation after convergence


def test_iterate_deterministic():
    runs = []
    for _ in range(2):
        objective, state, rng = sphere_setup(3)
        xs = []
        for _ in range(3):
            state, step, _ = nest_bo_iterate(state, objective, LoopConfig(), rng)
            xs.append((step.kind, step.step_size, state.x.copy()))
        runs.append(xs)
    for a, b in zip(*runs):
        assert a[0] == b[0] and a[1] == b[1]
        np.testing.assert_array_equal(a[2], b[2])


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(step_rule="wolfe")
    with pytest.raises(ValueError):
        LoopConfig(direction_rule="bfgs")

"""Damped Newton update on the GP belief, and one full NeST-BO iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .acquisition import AcqConfig, greedy_batch
from .gp import DerivBelief, GpState, Lookahead, NumericalError, condition, fit_hyperparams, grad_belief, posterior_mean_batch

log = logging.getLogger(__name__)

NEWTON = "newton"
FALLBACK = "fallback_gradient"
CONVERGED = "converged"

PSD_RTOL = 1e-8
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class StepResult:
    direction: np.ndarray
    step_size: float
    kind: str
    new_iterate: np.ndarray


def normalized_gradient(g: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Lambda g / ||Lambda^{1/2} g|| with Lambda = diag(lengthscales^2)."""
    lam = np.asarray(lengthscales, dtype=float) ** 2
    norm = np.sqrt(np.sum(lam * g * g))
    if norm == 0.0:
        return np.zeros_like(g)
    return lam * g / norm


def newton_direction(belief: DerivBelief, lengthscales) -> tuple[np.ndarray, str]:
    """Newton direction H^{-1} g if the symmetrized H is PSD, else a normalized gradient.

    The iterate moves along ``-direction``. A zero gradient gives a zero
    direction (callers treat that as convergence).
    """
    g = np.asarray(belief.mean_grad, dtype=float)
    if not np.any(g):
        return np.zeros_like(g), NEWTON
    H = 0.5 * (belief.mean_hess + belief.mean_hess.T)
    eig = np.linalg.eigvalsh(H)
    scale = max(1.0, float(np.max(np.abs(eig))))
    if eig[0] >= PSD_RTOL * scale:
        try:
            c = np.linalg.cholesky(H)
            v = np.linalg.solve(c.T, np.linalg.solve(c, g))
            return v, NEWTON
        except np.linalg.LinAlgError:
            pass
    return normalized_gradient(g, lengthscales), FALLBACK


def armijo_linesearch(
    gp: GpState,
    x_t,
    direction,
    gamma0: float = 1.0,
    shrink: float = 0.5,
    c1: float = 1e-4,
    max_steps: int = 20,
    grad=None,
    bounds=None,
) -> float:
    """Backtracking on the posterior mean: first gamma with sufficient decrease.

    Trial points ``x_t - gamma * direction`` are clamped to ``bounds`` (unit
    cube by default). If every trial fails, the smallest trial gamma is returned.
    """
    if not 0 < gamma0 <= 1 or not 0 < shrink < 1 or not 0 < c1 < 1:
        raise ValueError("need gamma0 in (0, 1], shrink and c1 in (0, 1)")
    x_t = np.asarray(x_t, dtype=float)
    v = np.asarray(direction, dtype=float)
    if not np.any(v):
        raise ValueError("direction must be non-zero")
    if grad is None:
        la = Lookahead(gp, x_t, with_hessian=False)
        grad = la.mean[: gp.dim] * gp.y_scale
    bounds = np.tile([0.0, 1.0], (x_t.size, 1)) if bounds is None else np.asarray(bounds)
    gammas = gamma0 * shrink ** np.arange(max_steps)
    trial = np.clip(x_t[None, :] - gammas[:, None] * v[None, :], bounds[:, 0], bounds[:, 1])
    mu = posterior_mean_batch(gp, np.vstack([x_t[None, :], trial]))
    if not np.all(np.isfinite(mu)):
        raise NumericalError("non-finite posterior mean in line search")
    slope = float(np.dot(grad, v))
    ok = mu[1:] <= mu[0] - c1 * gammas * slope
    hits = np.flatnonzero(ok)
    return float(gammas[hits[0]] if hits.size else gammas[-1])


@dataclass(frozen=True)
class LoopConfig:
    """Settings for one local optimizer (NeST-BO or the GIBO-style baseline).

    ``step_rule="armijo"`` backtracks from ``step_size``; ``"fixed"`` always
    uses ``step_size``. ``direction_rule="gradient"`` skips the Newton solve.
    With ``evaluate_iterate`` the objective is also queried at each new
    iterate (one extra evaluation per move) so the incumbent tracks it.
    """

    acq: AcqConfig = field(default_factory=AcqConfig)
    batch_size: int | None = None
    refit_every: int = 1
    fit_restarts: int = 2
    fit_maxiter: int = 100
    step_rule: str = "armijo"
    step_size: float = 1.0
    shrink: float = 0.5
    c1: float = 1e-4
    max_steps: int = 20
    direction_rule: str = "newton"
    evaluate_iterate: bool = True

    def __post_init__(self):
        if self.step_rule not in ("armijo", "fixed"):
            raise ValueError("step_rule must be 'armijo' or 'fixed'")
        if self.direction_rule not in ("newton", "gradient"):
            raise ValueError("direction_rule must be 'newton' or 'gradient'")
        if self.refit_every < 0:
            raise ValueError("refit_every must be >= 0")


@dataclass(frozen=True, eq=False)
class IterState:
    x: np.ndarray
    gp: GpState
    iteration: int = 0
    converged: bool = False


@dataclass(frozen=True, eq=False)
class IterInfo:
    batch: np.ndarray  # every point evaluated this iteration (iterate last, if evaluated)
    targets: np.ndarray
    acq_values: np.ndarray
    scale: float
    pi_g: float
    pi_h: float


def fit_and_condition(X, y, init, restarts, rng, maxiter=100) -> GpState:
    fit = fit_hyperparams(X, y, restarts=restarts, rng=rng, init=init, maxiter=maxiter)
    return condition(X, y, fit.params, standardize=True)


def take_step(gp: GpState, x, cfg: LoopConfig) -> tuple[StepResult, DerivBelief]:
    """Belief at ``x``, direction, step size and the clamped new iterate."""
    belief = grad_belief(gp, x)
    g = belief.mean_grad
    if np.linalg.norm(g) < GRAD_TOL:
        return StepResult(np.zeros_like(x), 0.0, CONVERGED, x.copy()), belief
    ls = gp.params.lengthscales
    if cfg.direction_rule == "newton":
        v, kind = newton_direction(belief, ls)
    else:
        v, kind = normalized_gradient(g, ls), FALLBACK
    if cfg.step_rule == "armijo":
        gamma = armijo_linesearch(
            gp, x, v, cfg.step_size, cfg.shrink, cfg.c1, cfg.max_steps, grad=g
        )
    else:
        gamma = cfg.step_size
    x_new = np.clip(x - gamma * v, 0.0, 1.0)
    return StepResult(v, float(gamma), kind, x_new), belief


def nest_bo_iterate(
    state: IterState,
    objective: Callable[[np.ndarray], np.ndarray],
    cfg: LoopConfig,
    rng: np.random.Generator,
    batch_size: int | None = None,
) -> tuple[IterState, StepResult, IterInfo]:
    """Select a batch, evaluate it, update the GP and move the iterate.

    ``objective`` maps a (b, d) array of unit-cube points to b observations.
    """
    gp, x = state.gp, state.x
    b = batch_size or cfg.batch_size or gp.dim
    Z, values, s_used = greedy_batch(gp, x, b, cfg.acq, rng=rng)
    y_new = np.asarray(objective(Z), dtype=float).reshape(-1)
    X = np.vstack([gp.inputs, Z])
    y = np.concatenate([gp.dataset.targets, y_new])
    it = state.iteration + 1
    if cfg.refit_every and it % cfg.refit_every == 0:
        gp = fit_and_condition(X, y, gp.params, cfg.fit_restarts, rng, cfg.fit_maxiter)
    else:
        gp = condition(X, y, gp.params, standardize=True)
    step, belief = take_step(gp, x, cfg)
    if cfg.evaluate_iterate and step.kind != CONVERGED:
        x_new = step.new_iterate[None, :]
        y_x = np.asarray(objective(x_new), dtype=float).reshape(-1)
        Z = np.vstack([Z, x_new])
        y_new = np.concatenate([y_new, y_x])
        gp = condition(
            np.vstack([gp.inputs, x_new]), np.concatenate([gp.dataset.targets, y_x]),
            gp.params, standardize=True,
        )
    info = IterInfo(Z, y_new, values, s_used, belief.pi_g, belief.pi_h)
    new_state = IterState(step.new_iterate, gp, it, step.kind == CONVERGED)
    return new_state, step, info

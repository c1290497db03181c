"""GP posterior over f, its gradient and its Hessian.

The posterior is conditioned on plain function observations only. Gradient and
Hessian beliefs at a query point come from applying the derivative operators to
the first kernel argument; their uncertainty is summarized by the *power
functions* (traces of the derivative covariances), which are accumulated column
by column without ever building the d^2 x d^2 Hessian covariance.

Targets may be standardized (``standardize=True``). All public outputs are in
the units of the raw targets: means are shifted/scaled back and variances and
power functions are multiplied by ``y_scale**2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .kernel import FunctionalLayout, KernelParams, cross_cov, deriv_functionals, gram

log = logging.getLogger(__name__)

DEFAULT_JITTER = 1e-8
NEG_VAR_TOL = 1e-10

LENGTHSCALE_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-8, 1e0)
SIGNAL_BOUNDS = (1e-4, 1e4)


class NumericalError(RuntimeError):
    """A factorization or variance computation broke down."""


class SingularHessianError(NumericalError):
    """The posterior mean Hessian is numerically singular."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.targets, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError("inputs must be an n x d matrix")
        if X.shape[0] != y.size:
            raise ValueError(f"{X.shape[0]} inputs but {y.size} targets")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.targets.size

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True, eq=False)
class GpState:
    """A fitted posterior. Build it with :func:`condition`."""

    dataset: Dataset
    params: KernelParams
    factor: np.ndarray  # lower Cholesky factor of K_XX
    weights: np.ndarray  # K_XX^{-1} (y_std - 0)
    y_mean: float = 0.0
    y_scale: float = 1.0
    jitter: float = DEFAULT_JITTER

    @property
    def inputs(self) -> np.ndarray:
        return self.dataset.inputs

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def diag_offset(self) -> float:
        """Noise plus jitter added to the kernel diagonal."""
        return self.params.noise_variance + self.jitter * self.params.signal_variance

    def kxx(self) -> np.ndarray:
        """Reconstruct K_XX = k(X, X) + (noise + jitter) I."""
        K = gram(self.inputs, self.params)
        K[np.diag_indices_from(K)] += self.diag_offset
        return K


@dataclass(frozen=True)
class DerivBelief:
    """Posterior gradient/Hessian means and power functions at one point."""

    mean_grad: np.ndarray
    mean_hess: np.ndarray
    pi_g: float
    pi_h: float


def _standardization(y: np.ndarray) -> tuple[float, float]:
    if y.size == 0:
        return 0.0, 1.0
    mu = float(np.mean(y))
    sd = float(np.std(y))
    if not np.isfinite(sd) or sd <= 1e-12 * max(1.0, abs(mu)):
        sd = 1.0
    return mu, sd


def condition(
    inputs,
    targets,
    params: KernelParams,
    *,
    standardize: bool = False,
    y_mean: float | None = None,
    y_scale: float | None = None,
    jitter: float = DEFAULT_JITTER,
) -> GpState:
    """Condition a zero-mean GP on ``(inputs, targets)``.

    With ``standardize=True`` the targets are centered and scaled by their
    sample mean and standard deviation unless ``y_mean``/``y_scale`` pin them.
    ``jitter`` is relative to the signal variance.
    """
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(0 if X.size == 0 else -1, params.dim)
    data = Dataset(X.reshape(-1, params.dim), targets)
    if data.dim != params.dim:
        raise ValueError(f"inputs have dimension {data.dim}, kernel has {params.dim}")
    y = data.targets
    if standardize:
        mu, sd = _standardization(y)
        mu = mu if y_mean is None else float(y_mean)
        sd = sd if y_scale is None else float(y_scale)
    else:
        mu = 0.0 if y_mean is None else float(y_mean)
        sd = 1.0 if y_scale is None else float(y_scale)
    state = GpState(
        dataset=data,
        params=params,
        factor=np.zeros((0, 0)),
        weights=np.zeros(0),
        y_mean=mu,
        y_scale=sd,
        jitter=jitter,
    )
    if data.n == 0:
        return state
    K = state.kxx()
    try:
        Lc = linalg.cholesky(K, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        eig = np.linalg.eigvalsh(K)
        raise NumericalError(
            f"Cholesky of K_XX failed (n={data.n}, min eig {eig[0]:.3e}, "
            f"max eig {eig[-1]:.3e}, jitter {jitter:.1e})"
        ) from exc
    ys = (y - mu) / sd
    alpha = linalg.cho_solve((Lc, True), ys, check_finite=False)
    object.__setattr__(state, "factor", Lc)
    object.__setattr__(state, "weights", alpha)
    return state


def _solve_lower(Lc: np.ndarray, B: np.ndarray) -> np.ndarray:
    return linalg.solve_triangular(Lc, B, lower=True, check_finite=False)


def _as_point(gp: GpState, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != gp.dim:
        raise ValueError(f"query has dimension {x.size}, GP has {gp.dim}")
    return x


def _clamp_nonneg(value, what: str):
    value = np.asarray(value, dtype=float)
    if np.any(value < -NEG_VAR_TOL):
        raise NumericalError(f"{what} is negative beyond roundoff: {np.min(value):.3e}")
    return np.maximum(value, 0.0)


def predict(gp: GpState, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at each row of ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    sf2 = gp.params.signal_variance
    if gp.n == 0:
        return np.full(len(Xq), gp.y_mean), np.full(len(Xq), sf2 * gp.y_scale**2)
    Kq = cross_cov(gp.inputs, Xq, gp.params)
    mean = gp.y_mean + gp.y_scale * (Kq.T @ gp.weights)
    V = _solve_lower(gp.factor, Kq)
    var = _clamp_nonneg(sf2 - np.sum(V * V, axis=0), "posterior variance")
    return mean, var * gp.y_scale**2


def posterior_mean(gp: GpState, x) -> float:
    x = _as_point(gp, x)
    return float(predict(gp, x[None, :])[0][0])


def posterior_var(gp: GpState, x) -> float:
    x = _as_point(gp, x)
    return float(predict(gp, x[None, :])[1][0])


def posterior_mean_batch(gp: GpState, Xq) -> np.ndarray:
    """Posterior mean only (skips the variance solve)."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if gp.n == 0:
        return np.full(len(Xq), gp.y_mean)
    return gp.y_mean + gp.y_scale * (cross_cov(gp.inputs, Xq, gp.params).T @ gp.weights)


class Lookahead:
    """Derivative-functional posterior at a fixed point ``x`` under growing conditioning.

    Holds the Cholesky factor of every conditioned input (data plus accepted
    fantasy inputs) and ``V = L^{-1} Q`` where Q stacks the cross-covariances of
    the gradient/Hessian functionals at ``x`` with those inputs. Adding a
    fantasy input costs one triangular solve and a rank-one update of the
    per-column variances; targets never enter, because posterior covariances
    do not depend on them.

    Everything here is in model (standardized) units.
    """

    def __init__(self, gp: GpState, x, with_hessian: bool = True):
        self.gp = gp
        self.x = _as_point(gp, x)
        self.layout = FunctionalLayout(gp.dim, with_hessian)
        self.params = gp.params
        self.inputs = gp.inputs
        self.factor = gp.factor
        prior = self.layout.prior_variances(gp.params)
        if not with_hessian:
            prior = prior[: gp.dim]
        if gp.n:
            Q = deriv_functionals(self.x, gp.inputs, gp.params, self.layout)
            self.V = _solve_lower(gp.factor, Q)
            self.var = prior - np.sum(self.V * self.V, axis=0)
            self.mean = Q.T @ gp.weights
        else:
            self.V = np.zeros((0, self.layout.n_cols))
            self.var = prior
            self.mean = np.zeros(self.layout.n_cols)
        self._col_weights = np.concatenate([np.ones(gp.dim), self.layout.hess_weights])
        self._kzz = gp.params.signal_variance + gp.diag_offset

    # -- power functions -------------------------------------------------
    def _powers(self, var: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.gp.dim
        pg = np.sum(var[..., :d], axis=-1)
        ph = var[..., d:] @ self._col_weights[d:]
        return pg, ph

    def powers(self) -> tuple[float, float]:
        """(pi_g, pi_h) at ``x`` in model units, clamped per the roundoff rule."""
        pg, ph = self._powers(self.var)
        pg = float(_clamp_nonneg(pg, "gradient power function"))
        ph = float(_clamp_nonneg(ph, "Hessian power function"))
        return pg, ph

    def mean_grad_hess(self, cols: np.ndarray | None = None):
        cols = self.mean if cols is None else cols
        d = self.gp.dim
        g = cols[..., :d]
        if not self.layout.with_hessian:
            return g, None
        H = self.layout.unpack_hessian(cols[..., d:])
        return g, H

    # -- candidate evaluation -------------------------------------------
    def _innovations(self, Z: np.ndarray):
        Z = np.atleast_2d(Z)
        Qz = deriv_functionals(self.x, Z, self.params, self.layout)
        if self.inputs.shape[0] == 0:
            s = np.full(len(Z), self._kzz)
            return Qz / np.sqrt(s)[:, None], s, None
        Kc = cross_cov(self.inputs, Z, self.params)
        A = _solve_lower(self.factor, Kc)
        s = self._kzz - np.sum(A * A, axis=0)
        if np.any(s <= 0.0):
            raise NumericalError(
                f"fantasy conditioning lost positive definiteness (min Schur {np.min(s):.3e})"
            )
        W = (Qz - A.T @ self.V) / np.sqrt(s)[:, None]
        return W, s, A

    def candidate_powers(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Power functions after conditioning on each row of ``Z`` *individually*.

        Unclamped, vectorized over candidates; used inside inner optimizers.
        """
        W, _, _ = self._innovations(Z)
        return self._powers(self.var[None, :] - W * W)

    def candidate_innovations(self, Z: np.ndarray) -> np.ndarray:
        """Mean shift per unit standard-normal fantasy target, one row per candidate."""
        return self._innovations(Z)[0]

    def append(self, z) -> tuple["Lookahead", np.ndarray]:
        """Condition on one more input; returns the new state and its innovation row."""
        z = np.asarray(z, dtype=float).reshape(1, -1)
        W, s, A = self._innovations(z)
        w = W[0]
        new = object.__new__(Lookahead)
        new.__dict__.update(self.__dict__)
        n = self.inputs.shape[0]
        Lnew = np.zeros((n + 1, n + 1))
        Lnew[:n, :n] = self.factor
        if A is not None:
            Lnew[n, :n] = A[:, 0]
        Lnew[n, n] = np.sqrt(s[0])
        new.factor = Lnew
        new.inputs = np.vstack([self.inputs, z])
        new.V = np.vstack([self.V, w[None, :]])
        new.var = self.var - w * w
        return new, w


def grad_belief(gp: GpState, x) -> DerivBelief:
    """Posterior mean gradient/Hessian and power functions at ``x``."""
    la = Lookahead(gp, x, with_hessian=True)
    g, H = la.mean_grad_hess()
    H = 0.5 * (H + H.T)
    pg, ph = la.powers()
    c, c2 = gp.y_scale, gp.y_scale**2
    return DerivBelief(mean_grad=g * c, mean_hess=H * c, pi_g=pg * c2, pi_h=ph * c2)


def fantasy_power(gp: GpState, x, Z) -> tuple[float, float]:
    """(pi_g, pi_h) at ``x`` after also conditioning on the pending inputs ``Z``."""
    la = Lookahead(gp, x, with_hessian=True)
    Z = np.asarray(Z, dtype=float).reshape(-1, gp.dim)
    for z in Z:
        la, _ = la.append(z)
    pg, ph = la.powers()
    c2 = gp.y_scale**2
    return pg * c2, ph * c2


def scale_factor_from(g: np.ndarray, H: np.ndarray) -> float:
    """s = ||H^{-1}||^2 ||g||^2 with the operator 2-norm on H^{-1}."""
    g = np.asarray(g, dtype=float)
    gn2 = float(g @ g)
    if gn2 == 0.0:
        return 0.0
    sv = np.linalg.svd(np.asarray(H, dtype=float), compute_uv=False)
    smin, smax = sv[-1], sv[0]
    if smin < 1e-10 * max(1.0, smax):
        raise SingularHessianError(f"sigma_min(H) = {smin:.3e} (||H|| = {smax:.3e})")
    return gn2 / smin**2


def scale_factor(belief: DerivBelief) -> float:
    return scale_factor_from(belief.mean_grad, belief.mean_hess)


# ---------------------------------------------------------------------------
# Hyperparameter fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    params: KernelParams
    status: str  # "ok" | "degenerate" | "failed"
    neg_log_lik: float = float("nan")
    restarts_ok: int = 0


def _pack(params: KernelParams) -> np.ndarray:
    return np.log(
        np.concatenate([[params.signal_variance], params.lengthscales, [params.noise_variance]])
    )


def _unpack(theta: np.ndarray) -> KernelParams:
    v = np.exp(theta)
    return KernelParams(signal_variance=v[0], lengthscales=v[1:-1], noise_variance=v[-1])


def neg_log_marginal_likelihood(theta, X, y, jitter=DEFAULT_JITTER):
    """Negative log marginal likelihood and its gradient in log-parameter space."""
    n, d = X.shape
    sf2 = np.exp(theta[0])
    ls = np.exp(theta[1 : 1 + d])
    sn2 = np.exp(theta[-1])
    Kse = gram(X, KernelParams(sf2, ls, 0.0))
    K = Kse.copy()
    K[np.diag_indices(n)] += sn2 + jitter * sf2
    try:
        Lc = linalg.cholesky(K, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    alpha = linalg.cho_solve((Lc, True), y, check_finite=False)
    nll = 0.5 * y @ alpha + np.sum(np.log(np.diag(Lc))) + 0.5 * n * np.log(2 * np.pi)
    Kinv = linalg.cho_solve((Lc, True), np.eye(n), check_finite=False)
    W = np.outer(alpha, alpha) - Kinv
    grad = np.empty_like(theta)
    grad[0] = -0.5 * np.sum(W * (Kse + jitter * sf2 * np.eye(n)))
    M = W * Kse
    Xs = X / ls
    sqsum = 2.0 * (M.sum(axis=1) @ (Xs * Xs)) - 2.0 * np.sum(Xs * (M @ Xs), axis=0)
    grad[1 : 1 + d] = -0.5 * sqsum
    grad[-1] = -0.5 * np.trace(W) * sn2
    return float(nll), grad


def _log_bounds(d):
    lb = [np.log(SIGNAL_BOUNDS[0])] + [np.log(LENGTHSCALE_BOUNDS[0])] * d + [np.log(NOISE_BOUNDS[0])]
    ub = [np.log(SIGNAL_BOUNDS[1])] + [np.log(LENGTHSCALE_BOUNDS[1])] * d + [np.log(NOISE_BOUNDS[1])]
    return np.array(lb), np.array(ub)


def default_params(d: int) -> KernelParams:
    return KernelParams(signal_variance=1.0, lengthscales=np.full(d, 0.5), noise_variance=1e-4)


def fit_hyperparams(
    inputs,
    targets,
    restarts: int = 3,
    rng: np.random.Generator | int | None = 0,
    init: KernelParams | None = None,
    maxiter: int = 200,
) -> FitResult:
    """Maximize the log marginal likelihood of standardized targets.

    The first start is ``init`` (or a fixed default), the second the fixed
    default when ``init`` was given; further starts are drawn log-uniformly
    from ``rng``. The best restart wins, ties going to the
    earliest one.
    """
    data = Dataset(inputs, targets)
    d = data.dim
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(rng)
    start = init if init is not None else default_params(d)
    lb, ub = _log_bounds(d)
    if data.n < 2 or np.ptp(data.targets) == 0.0:
        return FitResult(start.replace(noise_variance=NOISE_BOUNDS[0]), "degenerate")
    mu, sd = _standardization(data.targets)
    y = (data.targets - mu) / sd
    X = data.inputs

    starts = [np.clip(_pack(start), lb, ub)]
    if init is not None and restarts > 1:
        starts.append(_pack(default_params(d)))
    while len(starts) < restarts:
        theta = np.concatenate(
            [
                rng.uniform(np.log(0.2), np.log(5.0), 1),
                rng.uniform(np.log(0.05), np.log(2.0), d),
                rng.uniform(np.log(1e-6), np.log(1e-1), 1),
            ]
        )
        starts.append(theta)

    best_theta, best_val, n_ok = None, np.inf, 0
    for theta0 in starts:
        try:
            res = optimize.minimize(
                neg_log_marginal_likelihood,
                theta0,
                args=(X, y),
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lb, ub)),
                options={"maxiter": maxiter},
            )
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover
            log.debug("fit restart failed: %s", exc)
            continue
        if not np.isfinite(res.fun) or res.fun >= 1e25:
            continue
        n_ok += 1
        if res.fun < best_val:
            best_val, best_theta = float(res.fun), np.clip(res.x, lb, ub)
    if best_theta is None:
        return FitResult(start, "failed")
    return FitResult(_unpack(best_theta), "ok", best_val, n_ok)

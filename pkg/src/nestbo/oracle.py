"""Independent checks: finite differences, brute-force power functions, stencils.

Nothing here shares code paths with the fast routines it is used to verify:
kernel matrices are rebuilt from the scalar kernel, solves use dense
``np.linalg.solve`` and the Hessian covariance is assembled entry by entry.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import kernel as kern
from .gp import GpState, NumericalError, condition, grad_belief
from .kernel import KernelParams

FD_STEP_LOW = 1e-4  # times the lengthscale, derivative orders 1-2
FD_STEP_HIGH = 1e-2  # order 4


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def fd_gradient(f, x, steps) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = steps[i]
        g[i] = (f(x + e) - f(x - e)) / (2.0 * steps[i])
    return g


def fd_hessian(f, x, steps) -> np.ndarray:
    """Central second differences (4-point formula off the diagonal)."""
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(steps, dtype=float), x.shape)
    d = x.size
    H = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * steps[i] * steps[j])
    return H


def fd_d4k(x, xp, params: KernelParams, i: int, j: int, step=None) -> float:
    """d^4 k / dx_i dx_j dxp_i dxp_j by nested central differences of k."""
    ls = params.lengthscales
    h = FD_STEP_HIGH * ls if step is None else np.broadcast_to(step, ls.shape)
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    d = x.size

    def unit(a, size):
        e = np.zeros(d)
        e[a] = size
        return e

    def second(fun, y, a, b):
        # d^2 fun / dy_a dy_b by central differences
        if a == b:
            e = unit(a, h[a])
            return (fun(y + e) - 2.0 * fun(y) + fun(y - e)) / h[a] ** 2
        ea, eb = unit(a, h[a]), unit(b, h[b])
        return (fun(y + ea + eb) - fun(y + ea - eb) - fun(y - ea + eb) + fun(y - ea - eb)) / (
            4.0 * h[a] * h[b]
        )

    def inner(xx):
        return second(lambda yy: kern.k(xx, yy, params), xp, i, j)

    return float(second(inner, x, i, j))


# ---------------------------------------------------------------------------
# Brute-force posterior quantities
# ---------------------------------------------------------------------------


def _dense_kxx(gp: GpState) -> np.ndarray:
    X = gp.inputs
    n = X.shape[0]
    K = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            K[a, b] = kern.k(X[a], X[b], gp.params)
    return K + gp.diag_offset * np.eye(n)


def _prior_hess_cov(params: KernelParams) -> np.ndarray:
    """Prior covariance of vec(H) at any point: sf2 (L_ij L_kl + L_ik L_jl + L_il L_jk)."""
    lam = np.diag(params.inv_sq_lengthscales)
    d = lam.shape[0]
    P = np.empty((d * d, d * d))
    for i in range(d):
        for j in range(d):
            for a in range(d):
                for b in range(d):
                    P[i * d + j, a * d + b] = params.signal_variance * (
                        lam[i, j] * lam[a, b] + lam[i, a] * lam[j, b] + lam[i, b] * lam[j, a]
                    )
    return P


def hessian_posterior_cov(gp: GpState, x) -> np.ndarray:
    """Full d^2 x d^2 posterior covariance of vec(H(x)) in model units."""
    d = gp.dim
    x = np.asarray(x, dtype=float)
    P = _prior_hess_cov(gp.params)
    if gp.n == 0:
        return P
    X = gp.inputs
    A = np.array(
        [[kern.d2k_dx_dx(x, Xn, gp.params, i, j) for Xn in X] for i in range(d) for j in range(d)]
    )
    return P - A @ np.linalg.solve(_dense_kxx(gp), A.T)


def brute_force_pi_h(gp: GpState, x) -> float:
    """Trace of the explicitly assembled Hessian posterior covariance (raw units)."""
    if gp.dim > 4:
        raise ValueError("brute_force_pi_h is limited to d <= 4")
    return float(np.trace(hessian_posterior_cov(gp, x))) * gp.y_scale**2


def brute_force_pi_g(gp: GpState, x) -> float:
    d = gp.dim
    x = np.asarray(x, dtype=float)
    prior = sum(kern.d2k_dx_dxp(x, x, gp.params, i, i) for i in range(d))
    if gp.n == 0:
        return prior * gp.y_scale**2
    X = gp.inputs
    A = np.array([[kern.dk_dx(x, Xn, gp.params, i) for Xn in X] for i in range(d)])
    red = np.trace(A @ np.linalg.solve(_dense_kxx(gp), A.T))
    return float(prior - red) * gp.y_scale**2


# ---------------------------------------------------------------------------
# Symmetric stencil and the vanishing power-function sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stencil:
    center: np.ndarray
    h: float
    points: np.ndarray

    @property
    def size(self) -> int:
        return self.points.shape[0]


def make_stencil(center, h: float, d: int | None = None) -> Stencil:
    """{0} U {+-h e_i} U {+-h (e_i + e_j), i < j}, shifted to ``center``.

    Order: center; +h e_1, -h e_1, ...; then pairs (i, j) lexicographically
    with + before -.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    center = np.asarray(center, dtype=float).reshape(-1)
    d = center.size if d is None else d
    if center.size != d:
        raise ValueError("center dimension does not match d")
    pts = [np.zeros(d)]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        pts += [e, -e]
    for i in range(d):
        for j in range(i + 1, d):
            e = np.zeros(d)
            e[i] = e[j] = h
            pts += [e, -e]
    return Stencil(center, float(h), np.array(pts) + center)


@dataclass(frozen=True)
class VpcRow:
    h: float | None  # None for the unconditioned prior row
    pi_g: float
    pi_h: float
    replicates: int = 1
    failed: bool = False

    @property
    def total(self) -> float:
        return self.pi_g + self.pi_h


def vpc_check(
    params: KernelParams,
    d: int,
    h_sweep=(0.5, 0.2, 0.1),
    jitter: float = 1e-10,
    replicates: int = 1,
) -> list[VpcRow]:
    """Power functions at the stencil center as the stencil shrinks.

    The first row is the prior (no conditioning). ``h`` values are multiplied
    by the first lengthscale. Rows whose factorization fails are flagged and
    the sweep continues.
    """
    center = np.zeros(d)
    empty = condition(np.zeros((0, d)), [], params, jitter=jitter)
    prior = grad_belief(empty, center)
    rows = [VpcRow(None, prior.pi_g, prior.pi_h, replicates)]
    for h in h_sweep:
        st = make_stencil(center, h * params.lengthscales[0], d)
        X = np.repeat(st.points, replicates, axis=0)
        try:
            gp = condition(X, np.zeros(len(X)), params, jitter=jitter)
            b = grad_belief(gp, center)
            rows.append(VpcRow(float(h), b.pi_g, b.pi_h, replicates))
        except NumericalError:
            rows.append(VpcRow(float(h), float("nan"), float("nan"), replicates, failed=True))
    return rows


def vpc_csv(rows: list[VpcRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["h", "pi_g", "pi_h", "total", "replicates", "failed"])
    for r in rows:
        w.writerow(
            [
                "prior" if r.h is None else repr(r.h),
                repr(r.pi_g),
                repr(r.pi_h),
                repr(r.total),
                r.replicates,
                int(r.failed),
            ]
        )
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Newton-step error
# ---------------------------------------------------------------------------


def true_newton_step(f, x) -> np.ndarray | None:
    """H(x)^{-1} g(x) from analytic derivatives; None if H is singular."""
    g = np.asarray(f.grad(x), dtype=float)
    H = np.asarray(f.hess(x), dtype=float)
    sv = np.linalg.svd(H, compute_uv=False)
    if sv[-1] < 1e-12 * max(1.0, sv[0]):
        return None
    return np.linalg.solve(H, g)


def estimated_newton_step(gp: GpState, x) -> np.ndarray | None:
    """Posterior-mean Newton step; zero when the mean gradient is zero, None if singular."""
    b = grad_belief(gp, x)
    if not np.any(b.mean_grad):
        return np.zeros(gp.dim)
    sv = np.linalg.svd(b.mean_hess, compute_uv=False)
    if sv[-1] < 1e-10 * max(1.0, sv[0]):
        return None
    return np.linalg.solve(b.mean_hess, b.mean_grad)


def newton_error(f, x, gp: GpState) -> float | None:
    """||H^{-1} g - H_hat^{-1} g_hat|| at ``x``; None signals a skipped point.

    ``f`` must expose ``grad(x)`` and ``hess(x)`` (e.g. :class:`RffFunction`).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d_true = true_newton_step(f, x)
    if d_true is None:
        return None
    d_hat = estimated_newton_step(gp, x)
    if d_hat is None:
        return None
    return float(np.linalg.norm(d_true - d_hat))

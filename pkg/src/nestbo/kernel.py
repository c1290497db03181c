"""Squared-exponential ARD kernel and its closed-form derivatives.

Scalar entry points (``k``, ``dk_dx``, ``d2k_dx_dxp``, ``d2k_dx_dx``, ``d4k``)
follow the textbook formulas one entry at a time. The vectorized helpers at the
bottom (``cross_cov``, ``deriv_functionals`` ...) are what the GP code uses in
hot loops; they are checked against the scalar versions in the test suite.

Notation: ``L_ii = 1 / lengthscale_i**2`` and ``r = x - xp``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class KernelParams:
    """SE-ARD hyperparameters.

    Attributes
    ----------
    signal_variance : float
        Output scale sigma_f^2 (> 0).
    lengthscales : ndarray, shape (d,)
        Per-dimension length-scales (> 0).
    noise_variance : float
        Observation noise sigma^2 (>= 0).
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty vector")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if not self.noise_variance >= 0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    @property
    def inv_sq_lengthscales(self) -> np.ndarray:
        return 1.0 / self.lengthscales**2

    def replace(self, **changes) -> "KernelParams":
        values = dict(
            signal_variance=self.signal_variance,
            lengthscales=self.lengthscales,
            noise_variance=self.noise_variance,
        )
        values.update(changes)
        return KernelParams(**values)

    def to_dict(self) -> dict:
        return {
            "signal_variance": float(self.signal_variance),
            "lengthscales": [float(v) for v in self.lengthscales],
            "noise_variance": float(self.noise_variance),
        }


def _check_pair(x, xp, params):
    x = np.asarray(x, dtype=float).reshape(-1)
    xp = np.asarray(xp, dtype=float).reshape(-1)
    if x.shape != xp.shape or x.size != params.dim:
        raise ValueError(
            f"dimension mismatch: x has {x.size}, xp has {xp.size}, kernel has {params.dim}"
        )
    return x, xp


def _check_index(i, d):
    if not 0 <= i < d:
        raise IndexError(f"dimension index {i} out of range for d={d}")


def _coincident(x, xp) -> bool:
    return x is xp or np.array_equal(x, xp)


def k(x, xp, params: KernelParams) -> float:
    """Kernel value sigma_f^2 exp(-0.5 sum_i (x_i - xp_i)^2 / l_i^2)."""
    if _coincident(x, xp):
        _check_pair(x, xp, params)
        return float(params.signal_variance)
    x, xp = _check_pair(x, xp, params)
    r = x - xp
    return float(params.signal_variance * np.exp(-0.5 * np.sum(r * r * params.inv_sq_lengthscales)))


def dk_dx(x, xp, params: KernelParams, i: int) -> float:
    """d k / d x_i = -L_ii r_i k."""
    _check_index(i, params.dim)
    if _coincident(x, xp):
        _check_pair(x, xp, params)
        return 0.0
    x, xp = _check_pair(x, xp, params)
    lam = params.inv_sq_lengthscales
    return float(-lam[i] * (x[i] - xp[i]) * k(x, xp, params))


def d2k_dx_dxp(x, xp, params: KernelParams, i: int, j: int) -> float:
    """d^2 k / d x_i d xp_j = (L_ii delta_ij - L_ii L_jj r_i r_j) k."""
    _check_index(i, params.dim)
    _check_index(j, params.dim)
    lam = params.inv_sq_lengthscales
    if _coincident(x, xp):
        _check_pair(x, xp, params)
        return float(lam[i] * params.signal_variance) if i == j else 0.0
    x, xp = _check_pair(x, xp, params)
    r = x - xp
    delta = 1.0 if i == j else 0.0
    return float((lam[i] * delta - lam[i] * lam[j] * r[i] * r[j]) * k(x, xp, params))


def d2k_dx_dx(x, xp, params: KernelParams, i: int, j: int) -> float:
    """d^2 k / d x_i d x_j = (-L_ii delta_ij + L_ii L_jj r_i r_j) k.

    The same expression holds for two derivatives in the second argument.
    """
    _check_index(i, params.dim)
    _check_index(j, params.dim)
    lam = params.inv_sq_lengthscales
    if _coincident(x, xp):
        _check_pair(x, xp, params)
        return float(-lam[i] * params.signal_variance) if i == j else 0.0
    x, xp = _check_pair(x, xp, params)
    r = x - xp
    delta = 1.0 if i == j else 0.0
    return float((-lam[i] * delta + lam[i] * lam[j] * r[i] * r[j]) * k(x, xp, params))


def d4k(x, xp, params: KernelParams, i: int, j: int) -> float:
    """d^4 k / d x_i d x_j d xp_i d xp_j (two derivatives in each argument)."""
    _check_index(i, params.dim)
    _check_index(j, params.dim)
    lam = params.inv_sq_lengthscales
    sf2 = params.signal_variance
    if _coincident(x, xp):
        _check_pair(x, xp, params)
        if i == j:
            return float(3.0 * lam[i] ** 2 * sf2)
        return float(lam[i] * lam[j] * sf2)
    x, xp = _check_pair(x, xp, params)
    r = x - xp
    kv = k(x, xp, params)
    if i == j:
        a = lam[i] * r[i] ** 2
        return float(lam[i] ** 2 * (a * a - 6.0 * a + 3.0) * kv)
    a = lam[i] * r[i] ** 2
    b = lam[j] * r[j] ** 2
    return float(lam[i] * lam[j] * (a * b - a - b + 1.0) * kv)


# ---------------------------------------------------------------------------
# Vectorized helpers
# ---------------------------------------------------------------------------


def cross_cov(X1: np.ndarray, X2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Kernel matrix k(X1, X2), shape (n1, n2)."""
    X1 = np.atleast_2d(X1) / params.lengthscales
    X2 = np.atleast_2d(X2) / params.lengthscales
    sq = (
        np.sum(X1 * X1, axis=1)[:, None]
        + np.sum(X2 * X2, axis=1)[None, :]
        - 2.0 * X1 @ X2.T
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def scaled_sq_dists(X: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Symmetric matrix of sum_i (x_ai - x_bi)^2 / l_i^2 with an exact zero diagonal."""
    Xs = np.atleast_2d(X) / lengthscales
    sq = np.sum(Xs * Xs, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * Xs @ Xs.T
    D = 0.5 * (D + D.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def gram(X: np.ndarray, params: KernelParams) -> np.ndarray:
    """Noise-free kernel matrix k(X, X)."""
    return params.signal_variance * np.exp(-0.5 * scaled_sq_dists(X, params.lengthscales))


@dataclass(frozen=True)
class FunctionalLayout:
    """Column layout for the gradient / Hessian functionals at a point.

    Columns ``0..d-1`` are the gradient components. The remaining columns are
    the Hessian entries (i, j) with i <= j, in row-major order. ``weights``
    counts each off-diagonal entry twice so that weighted sums over columns
    reproduce sums over the full d x d Hessian.
    """

    dim: int
    with_hessian: bool = True
    pairs_i: np.ndarray = field(init=False, repr=False)
    pairs_j: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.with_hessian:
            iu, ju = np.triu_indices(self.dim)
        else:
            iu = ju = np.zeros(0, dtype=int)
        object.__setattr__(self, "pairs_i", iu)
        object.__setattr__(self, "pairs_j", ju)

    @property
    def n_grad(self) -> int:
        return self.dim

    @property
    def n_hess(self) -> int:
        return self.pairs_i.size

    @property
    def n_cols(self) -> int:
        return self.dim + self.pairs_i.size

    @property
    def hess_weights(self) -> np.ndarray:
        return np.where(self.pairs_i == self.pairs_j, 1.0, 2.0)

    def prior_variances(self, params: KernelParams) -> np.ndarray:
        """Prior variances of every functional column at any point."""
        lam = params.inv_sq_lengthscales
        sf2 = params.signal_variance
        g = lam * sf2
        li, lj = lam[self.pairs_i], lam[self.pairs_j]
        h = np.where(self.pairs_i == self.pairs_j, 3.0 * li * li, li * lj) * sf2
        return np.concatenate([g, h])

    def unpack_hessian(self, cols: np.ndarray) -> np.ndarray:
        """Rebuild symmetric Hessian(s) from the packed upper-triangle columns."""
        cols = np.asarray(cols)
        lead = cols.shape[:-1]
        H = np.zeros(lead + (self.dim, self.dim))
        H[..., self.pairs_i, self.pairs_j] = cols
        H[..., self.pairs_j, self.pairs_i] = cols
        return H


def deriv_functionals(
    x: np.ndarray, X: np.ndarray, params: KernelParams, layout: FunctionalLayout
) -> np.ndarray:
    """Cross-covariances between derivative functionals at ``x`` and f(X).

    Returns Q with shape (n, layout.n_cols): ``Q[n, i] = dk(x, X_n)/dx_i`` for
    the gradient columns and ``Q[n, c] = d^2 k(x, X_n)/dx_i dx_j`` for the
    Hessian columns.
    """
    X = np.atleast_2d(X)
    lam = params.inv_sq_lengthscales
    R = x[None, :] - X
    kv = params.signal_variance * np.exp(-0.5 * np.sum(R * R * lam, axis=1))
    LR = R * lam
    grad = -LR * kv[:, None]
    if not layout.with_hessian:
        return grad
    pi, pj = layout.pairs_i, layout.pairs_j
    diag = np.where(pi == pj, lam[pi], 0.0)
    hess = (LR[:, pi] * LR[:, pj] - diag[None, :]) * kv[:, None]
    return np.concatenate([grad, hess], axis=1)

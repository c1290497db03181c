"""Newton-step-targeting (NeST) and gradient-information (GI) acquisitions.

Both are lookahead uncertainties at the current iterate ``x_t``: after
conditioning on pending inputs ``Z`` the NeST value is ``pi_g + s * pi_h``,
and GI keeps only ``pi_g``. Batches are built greedily: each pick minimizes
the single-point value inside a box around ``x_t``, then joins the pending set.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .gp import GpState, Lookahead, SingularHessianError, scale_factor_from

log = logging.getLogger(__name__)

SCALE_MODES = ("fixed", "plugin", "monte_carlo")
CRITERIA = ("nest", "gi")


@dataclass(frozen=True)
class AcqConfig:
    """Acquisition settings.

    ``scale_mode`` picks how the Hessian weight is set: a fixed
    ``scale_value``, the plug-in scale factor of the current belief, or a
    Monte-Carlo average over ``mc_samples`` fantasy outcomes.
    ``criterion="gi"`` drops the Hessian term altogether.
    """

    scale_mode: str = "fixed"
    scale_value: float = 1.0
    mc_samples: int = 32
    criterion: str = "nest"
    box_radius: float = 0.2
    num_restarts: int = 5
    raw_samples: int = 20
    inner_maxiter: int = 100
    inner_gtol: float = 1e-6
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.scale_mode == "fixed" and self.criterion == "nest" and not self.scale_value > 0:
            raise ValueError("fixed scale value must be > 0")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")
        if not 0 < self.box_radius <= 1:
            raise ValueError("box_radius must lie in (0, 1]")
        if self.num_restarts < 1 or self.raw_samples < 1:
            raise ValueError("num_restarts and raw_samples must be >= 1")


def _weighted_power(gp: GpState, x_t, Z, s_hat: float) -> float:
    la = Lookahead(gp, x_t, with_hessian=s_hat != 0.0)
    for z in np.asarray(Z, dtype=float).reshape(-1, gp.dim):
        la, _ = la.append(z)
    pg, ph = la.powers()
    return (pg + s_hat * ph) * gp.y_scale**2


def nest_value(gp: GpState, x_t, Z, s_hat: float) -> float:
    """pi_g + s_hat * pi_h at ``x_t`` after conditioning on ``Z``."""
    if not s_hat > 0:
        raise ValueError("s_hat must be > 0")
    return _weighted_power(gp, x_t, Z, float(s_hat))


def gi_value(gp: GpState, x_t, Z) -> float:
    """Trace of the gradient posterior covariance at ``x_t`` after conditioning on ``Z``."""
    return _weighted_power(gp, x_t, Z, 0.0)


def _sample_scales(la: Lookahead, cols: np.ndarray, fallback: float) -> tuple[np.ndarray, int]:
    """Scale factor for each row of sampled functional means; singular rows use ``fallback``."""
    g, H = la.mean_grad_hess(cols)
    gn2 = np.sum(g * g, axis=-1)
    sv = np.linalg.svd(H, compute_uv=False)
    smin, smax = sv[..., -1], sv[..., 0]
    singular = smin < 1e-10 * np.maximum(1.0, smax)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(singular, fallback, gn2 / smin**2)
    s = np.where(gn2 == 0.0, 0.0, s)
    return s, int(np.sum(singular & (gn2 != 0.0)))


def plugin_scale(la: Lookahead, default: float = 1.0) -> float:
    """Scale factor of the current belief; ``default`` if its Hessian is singular."""
    g, H = la.mean_grad_hess()
    try:
        return scale_factor_from(g, H)
    except SingularHessianError:
        log.debug("plug-in scale: singular Hessian, using %g", default)
        return default


def mc_nest_value(gp: GpState, x_t, Z, num_samples: int = 32, rng=None) -> float:
    """Monte-Carlo NeST value: pi_g + E[s] pi_h with E over joint fantasy targets at ``Z``."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    rng = np.random.default_rng(rng)
    la = Lookahead(gp, x_t, with_hessian=True)
    s_plug = plugin_scale(la)
    samples = np.tile(la.mean, (num_samples, 1))
    for z in np.asarray(Z, dtype=float).reshape(-1, gp.dim):
        la, w = la.append(z)
        samples += rng.standard_normal(num_samples)[:, None] * w[None, :]
    s, n_sing = _sample_scales(la, samples, s_plug)
    if n_sing:
        log.info("mc_nest_value: %d/%d samples had a singular Hessian", n_sing, num_samples)
    pg, ph = la.powers()
    return (pg + float(np.mean(s)) * ph) * gp.y_scale**2


def _raw_points(lo, hi, n, rng) -> np.ndarray:
    sampler = qmc.Sobol(d=lo.size, scramble=True, seed=rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        U = sampler.random(n)
    return lo + U * (hi - lo)


class _PickObjective:
    """Single-candidate acquisition, vectorized over rows, in model units."""

    def __init__(self, la: Lookahead, cfg: AcqConfig, s_hat: float, mc=None):
        self.la = la
        self.cfg = cfg
        self.s_hat = s_hat
        self.mc = mc  # (samples, xi, fallback) in monte_carlo mode

    def __call__(self, U: np.ndarray) -> np.ndarray:
        pg, ph = self.la.candidate_powers(U)
        if self.cfg.criterion == "gi":
            return pg
        if self.mc is None:
            return pg + self.s_hat * ph
        samples, xi, fallback = self.mc
        W = self.la.candidate_innovations(U)  # (m, C)
        cols = samples[None, :, :] + xi[None, :, None] * W[:, None, :]
        s, _ = _sample_scales(self.la, cols, fallback)
        return pg + np.mean(s, axis=1) * ph

    def value_and_grad(self, u: np.ndarray, h: float):
        d = u.size
        E = np.eye(d) * h
        U = np.vstack([u[None, :], u + E, u - E])
        v = self(U)
        return float(v[0]), (v[1 : d + 1] - v[d + 1 :]) / (2.0 * h)


def _minimize_in_box(obj: _PickObjective, lo, hi, cfg: AcqConfig, rng) -> tuple[np.ndarray, float]:
    raw = _raw_points(lo, hi, cfg.raw_samples, rng)
    raw_vals = obj(raw)
    order = np.argsort(raw_vals, kind="stable")
    best = None
    for idx in order[: cfg.num_restarts]:
        try:
            res = optimize.minimize(
                obj.value_and_grad,
                raw[idx],
                args=(cfg.fd_step,),
                jac=True,
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={"maxiter": cfg.inner_maxiter, "gtol": cfg.inner_gtol},
            )
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.debug("polish from raw sample %d failed: %s", idx, exc)
            continue
        u = np.clip(res.x, lo, hi)
        val = float(obj(u[None, :])[0])
        if np.isfinite(val) and (best is None or val < best[1]):
            best = (u, val)
    if best is None:
        return raw[order[0]].copy(), float(raw_vals[order[0]])
    return best


def greedy_batch(
    gp: GpState,
    x_t,
    b: int,
    cfg: AcqConfig,
    bounds=None,
    rng=None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Greedy batch plus the acquisition value after each pick and the scale used.

    ``bounds`` is a (d, 2) box in GP input coordinates (unit cube by default).
    Values are in raw target units. The returned scale is NaN in Monte-Carlo mode.
    """
    if b < 1:
        raise ValueError("batch size must be >= 1")
    rng = np.random.default_rng(rng)
    d = gp.dim
    x_t = np.asarray(x_t, dtype=float).reshape(-1)
    bounds = np.tile([0.0, 1.0], (d, 1)) if bounds is None else np.asarray(bounds, dtype=float)
    lo = np.maximum(x_t - cfg.box_radius, bounds[:, 0])
    hi = np.minimum(x_t + cfg.box_radius, bounds[:, 1])

    use_h = cfg.criterion == "nest"
    la = Lookahead(gp, x_t, with_hessian=use_h)
    mc_state = None
    if not use_h:
        s_hat = 0.0
    elif cfg.scale_mode == "fixed":
        s_hat = float(cfg.scale_value)
    elif cfg.scale_mode == "plugin":
        s_hat = plugin_scale(la, default=cfg.scale_value)
    else:
        s_hat = float("nan")
        fallback = plugin_scale(la, default=cfg.scale_value)
        mc_state = [np.tile(la.mean, (cfg.mc_samples, 1)), None, fallback]

    c2 = gp.y_scale**2
    picks, values = [], []
    for _ in range(b):
        mc = None
        if mc_state is not None:
            mc_state[1] = rng.standard_normal(cfg.mc_samples)
            mc = tuple(mc_state)
        obj = _PickObjective(la, cfg, s_hat, mc)
        u, _ = _minimize_in_box(obj, lo, hi, cfg, rng)
        la, w = la.append(u)
        picks.append(u)
        pg, ph = la.powers()
        if not use_h:
            values.append(pg * c2)
        elif mc_state is None:
            values.append((pg + s_hat * ph) * c2)
        else:
            mc_state[0] = mc_state[0] + mc_state[1][:, None] * w[None, :]
            s, _ = _sample_scales(la, mc_state[0], mc_state[2])
            values.append((pg + float(np.mean(s)) * ph) * c2)
    return np.array(picks), np.array(values), s_hat


def select_batch(gp: GpState, x_t, b: int, cfg: AcqConfig, bounds=None, rng=None) -> np.ndarray:
    """b x d batch chosen greedily around ``x_t``."""
    return greedy_batch(gp, x_t, b, cfg, bounds, rng)[0]

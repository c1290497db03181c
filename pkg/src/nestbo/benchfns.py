"""Synthetic objectives, embedded high-dimensional variants and RFF prior draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FUNCTION_IDS = ("sphere", "rosenbrock", "griewank", "ackley", "rff_prior")


def sphere(x: np.ndarray) -> float:
    return float(np.sum(x * x))


def rosenbrock(x: np.ndarray) -> float:
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (x[:-1] - 1.0) ** 2))


def griewank(x: np.ndarray) -> float:
    idx = np.sqrt(np.arange(1, x.size + 1))
    return float(np.sum(x * x) / 4000.0 - np.prod(np.cos(x / idx)) + 1.0)


def griewank_grad(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    idx = np.sqrt(np.arange(1, x.size + 1))
    c = np.cos(x / idx)
    s = np.sin(x / idx)
    # product of cosines with entry i removed
    others = np.array([np.prod(np.delete(c, i)) for i in range(x.size)])
    return x / 2000.0 + s / idx * others


def griewank_hess(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.size
    idx = np.sqrt(np.arange(1, d + 1))
    c = np.cos(x / idx)
    s = np.sin(x / idx)
    H = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            if i == j:
                rest = np.prod(np.delete(c, i))
                H[i, i] = 1.0 / 2000.0 + c[i] / idx[i] ** 2 * rest
            else:
                rest = np.prod(np.delete(c, [i, j]))
                H[i, j] = -s[i] / idx[i] * s[j] / idx[j] * rest
    return H


def ackley(x: np.ndarray) -> float:
    d = x.size
    return float(
        -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x * x) / d))
        - np.exp(np.sum(np.cos(2.0 * np.pi * x)) / d)
        + 20.0
        + np.e
    )


_BASE = {"sphere": sphere, "rosenbrock": rosenbrock, "griewank": griewank, "ackley": ackley}


def default_bounds(function_id: str, d: int) -> np.ndarray:
    """Search box per function as a (d, 2) array."""
    if function_id == "sphere":
        lo, hi = -float(d * d), float(d * d)
    elif function_id in ("rosenbrock", "ackley"):
        lo, hi = -5.0, 5.0
    elif function_id == "griewank":
        lo, hi = -300.0, 300.0
    elif function_id == "rff_prior":
        lo, hi = 0.0, 1.0
    else:
        raise ValueError(f"unknown function_id {function_id!r}")
    return np.tile([lo, hi], (d, 1))


# ---------------------------------------------------------------------------
# Random Fourier feature draws from an SE prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RffFunction:
    """f(x) = sum_i w_i sqrt(2/n_b) cos(theta_i . x + tau_i)."""

    weights: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    lengthscale: float

    @property
    def num_features(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    def __call__(self, x) -> float:
        return rff_eval(self, x)

    def grad(self, x) -> np.ndarray:
        return rff_grad(self, x)

    def hess(self, x) -> np.ndarray:
        return rff_hess(self, x)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "frequencies": self.frequencies.tolist(),
            "phases": self.phases.tolist(),
            "lengthscale": self.lengthscale,
        }


def lengthscale_heuristic(d: int) -> float:
    """Default length-scale for prior draws in dimension d (sqrt(d)/10)."""
    return np.sqrt(d) / 10.0


def sample_rff(d: int, n_b: int = 1024, lengthscale=None, rng=None) -> RffFunction:
    """Draw an approximate SE(unit variance) prior sample via random Fourier features.

    If ``lengthscale`` is None it is drawn uniformly from 0.8-1.2 times
    :func:`lengthscale_heuristic`.
    """
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    rng = np.random.default_rng(rng)
    if lengthscale is None:
        lengthscale = rng.uniform(0.8, 1.2) * lengthscale_heuristic(d)
    w = rng.standard_normal(n_b)
    theta = rng.standard_normal((n_b, d)) / lengthscale
    tau = rng.uniform(0.0, 2.0 * np.pi, n_b)
    return RffFunction(w, theta, tau, float(lengthscale))


def _rff_parts(f: RffFunction, x):
    x = np.asarray(x, dtype=float)
    arg = x @ f.frequencies.T + f.phases
    return f.weights * np.sqrt(2.0 / f.num_features), arg


def rff_eval(f: RffFunction, x):
    """Value at a point (float) or at each row of a matrix (array)."""
    a, arg = _rff_parts(f, x)
    out = np.cos(arg) @ a
    return float(out) if np.ndim(out) == 0 else out


def rff_grad(f: RffFunction, x) -> np.ndarray:
    a, arg = _rff_parts(f, np.reshape(x, -1))
    return -(a * np.sin(arg)) @ f.frequencies


def rff_hess(f: RffFunction, x) -> np.ndarray:
    a, arg = _rff_parts(f, np.reshape(x, -1))
    c = a * np.cos(arg)
    H = -(f.frequencies.T * c) @ f.frequencies
    return 0.5 * (H + H.T)  # BLAS output is symmetric only up to rounding


# ---------------------------------------------------------------------------
# Benchmark specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BenchmarkSpec:
    function_id: str
    ambient_dim: int
    bounds: np.ndarray
    active_dims: np.ndarray | None = None
    noise_std: float = 0.0
    optimum_value: float | None = 0.0
    rff: RffFunction | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.function_id not in FUNCTION_IDS:
            raise ValueError(f"unknown function_id {self.function_id!r}")
        b = np.asarray(self.bounds, dtype=float).reshape(self.ambient_dim, 2)
        object.__setattr__(self, "bounds", b)
        if self.active_dims is not None:
            a = np.asarray(self.active_dims, dtype=int)
            if a.size == 0 or a.min() < 0 or a.max() >= self.ambient_dim or np.unique(a).size != a.size:
                raise ValueError("active_dims must be distinct indices in [0, d)")
            object.__setattr__(self, "active_dims", a)
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.function_id == "rff_prior" and self.rff is None:
            raise ValueError("rff_prior specs need an RffFunction")

    @property
    def effective_dim(self) -> int:
        return self.ambient_dim if self.active_dims is None else self.active_dims.size

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    def to_dict(self) -> dict:
        out = {
            "function_id": self.function_id,
            "ambient_dim": self.ambient_dim,
            "bounds": self.bounds.tolist(),
            "active_dims": None if self.active_dims is None else self.active_dims.tolist(),
            "noise_std": self.noise_std,
            "optimum_value": self.optimum_value,
        }
        if self.rff is not None:
            out["rff"] = self.rff.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkSpec":
        rff = None
        if data.get("rff") is not None:
            r = data["rff"]
            rff = RffFunction(
                np.asarray(r["weights"]),
                np.asarray(r["frequencies"]),
                np.asarray(r["phases"]),
                float(r["lengthscale"]),
            )
        return cls(
            function_id=data["function_id"],
            ambient_dim=int(data["ambient_dim"]),
            bounds=np.asarray(data["bounds"], dtype=float),
            active_dims=data.get("active_dims"),
            noise_std=float(data.get("noise_std", 0.0)),
            optimum_value=data.get("optimum_value"),
            rff=rff,
        )


def make_spec(function_id: str, d: int, noise_std: float = 0.0, rng=None, bounds=None) -> BenchmarkSpec:
    """Standard (non-embedded) benchmark; ``rff_prior`` draws a fresh RFF sample from ``rng``."""
    rff = None
    optimum = 0.0
    if function_id == "rff_prior":
        rff = sample_rff(d, rng=rng)
        optimum = None
    return BenchmarkSpec(
        function_id=function_id,
        ambient_dim=d,
        bounds=default_bounds(function_id, d) if bounds is None else bounds,
        noise_std=noise_std,
        optimum_value=optimum,
        rff=rff,
    )


def embedded_spec(base: str, d: int, d_eff: int, rng=None, noise_std: float = 0.0) -> BenchmarkSpec:
    """Base function of dimension d_eff hidden among d coordinates.

    The active subset is uniform at random; the base function's bounds for
    dimension ``d_eff`` are used on every ambient coordinate.
    """
    if not 1 <= d_eff <= d:
        raise ValueError(f"need 1 <= d_eff <= d, got d_eff={d_eff}, d={d}")
    if base == "rff_prior":
        raise ValueError("embedded rff_prior is not supported")
    rng = np.random.default_rng(rng)
    if d_eff == d:
        return make_spec(base, d, noise_std)
    active = np.sort(rng.choice(d, size=d_eff, replace=False))
    box = default_bounds(base, d_eff)[0]
    return BenchmarkSpec(
        function_id=base,
        ambient_dim=d,
        bounds=np.tile(box, (d, 1)),
        active_dims=active,
        noise_std=noise_std,
        optimum_value=0.0,
    )


def noiseless_value(spec: BenchmarkSpec, x) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != spec.ambient_dim:
        raise ValueError(f"x has dimension {x.size}, benchmark has {spec.ambient_dim}")
    span = spec.upper - spec.lower
    tol = 1e-12 * np.maximum(1.0, np.abs(span))
    if np.any(x < spec.lower - tol) or np.any(x > spec.upper + tol):
        raise ValueError("x outside the benchmark bounds")
    xa = x if spec.active_dims is None else x[spec.active_dims]
    if spec.function_id == "rff_prior":
        return rff_eval(spec.rff, xa)
    return _BASE[spec.function_id](xa)


def evaluate(spec: BenchmarkSpec, x, rng: np.random.Generator | None = None) -> float:
    """Objective value, plus N(0, noise_std^2) noise drawn from ``rng`` when configured."""
    value = noiseless_value(spec, x)
    if spec.noise_std > 0:
        if rng is None:
            raise ValueError("a noisy benchmark needs an rng")
        value += spec.noise_std * float(rng.standard_normal())
    return value


def optimum_location(spec: BenchmarkSpec) -> np.ndarray | None:
    """Known minimizer in ambient coordinates (inactive coordinates at 0 or the box center)."""
    d = spec.ambient_dim
    if spec.function_id == "rff_prior":
        return None
    x = np.clip(np.zeros(d), spec.lower, spec.upper)
    if spec.function_id == "rosenbrock":
        idx = np.arange(d) if spec.active_dims is None else spec.active_dims
        x[idx] = 1.0
    return x


def estimate_rff_minimum(f: RffFunction, bounds=None, n_starts: int = 100, rng=None) -> float:
    """Approximate global minimum of an RFF draw by multistart L-BFGS-B."""
    from scipy import optimize

    rng = np.random.default_rng(rng)
    d = f.dim
    b = np.tile([0.0, 1.0], (d, 1)) if bounds is None else np.asarray(bounds, dtype=float)
    starts = rng.uniform(b[:, 0], b[:, 1], size=(n_starts, d))
    best = np.inf
    for x0 in starts:
        res = optimize.minimize(
            lambda x: (rff_eval(f, x), rff_grad(f, x)), x0, jac=True, method="L-BFGS-B", bounds=b
        )
        best = min(best, float(res.fun))
    return best

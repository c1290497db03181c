"""Seeded experiment orchestration: configs, replicate runs, traces, aggregation.

Every replicate derives independent random streams from its seed with
``np.random.SeedSequence([seed, k])``; stream ``k`` has a fixed role (see
``_STREAMS``), so methods run with the same seed see the same benchmark
instance, start point and noise offsets.

Output layout of :func:`run_experiment` (one directory per experiment)::

    <out_dir>/<name>/config.json
    <out_dir>/<name>/replicate_<seed>.csv    eval_index,y,best_so_far,regret
    <out_dir>/<name>/replicate_<seed>.json   full trace incl. per-iteration diagnostics
    <out_dir>/<name>/aggregate.csv           eval_index,count,median_best,se_best,median_regret,se_regret
    <out_dir>/<name>/aggregate.json
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import benchfns as bf
from . import subspace as sub
from .acquisition import AcqConfig, greedy_batch
from .gp import condition, fit_hyperparams
from .newton import IterState, LoopConfig, fit_and_condition, nest_bo_iterate, take_step
from .oracle import newton_error

log = logging.getLogger(__name__)

METHODS = ("nest_bo", "nest_bo_sub", "gibo", "sobol_random")
_STREAMS = {"benchmark": 0, "init": 1, "method": 2, "noise": 3}


def _stream(seed: int, role: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[role]]))


def _sobol(d: int, n: int, rng) -> np.ndarray:
    if n <= 0:
        return np.zeros((0, d))
    sampler = qmc.Sobol(d=d, scramble=True, seed=rng)
    # power-of-two balance warnings are irrelevant for short designs
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=UserWarning)
        return sampler.random(n)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkDef:
    """Benchmark description; the concrete instance is drawn per replicate seed."""

    function: str
    dim: int
    effective_dim: int | None = None
    noise_std: float = 0.0

    def __post_init__(self):
        if self.function not in bf.FUNCTION_IDS:
            raise ValueError(f"unknown benchmark function {self.function!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.effective_dim is not None and not 1 <= self.effective_dim <= self.dim:
            raise ValueError("effective_dim must lie in [1, dim]")

    def build(self, rng) -> bf.BenchmarkSpec:
        if self.effective_dim is None or self.effective_dim == self.dim:
            return bf.make_spec(self.function, self.dim, self.noise_std, rng=rng)
        return bf.embedded_spec(self.function, self.dim, self.effective_dim, rng, self.noise_std)


@dataclass(frozen=True)
class SubspaceConfig:
    m0: int = 4
    window: int = sub.EXPANSION_WINDOW


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: BenchmarkDef
    method: str = "nest_bo"
    budget: int = 100
    batch_size: int | None = None  # default: d, or the current subspace dim
    init_points: int = 10
    seed: int = 0
    acq: AcqConfig = field(default_factory=AcqConfig)
    refit_every: int = 1
    fit_restarts: int = 2
    step_size: float = 1.0  # Armijo start for NeST-BO, fixed eta for GIBO
    subspace: SubspaceConfig | None = None
    name: str = "experiment"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.init_points < 1:
            raise ValueError("init_points must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.method == "nest_bo_sub" and self.subspace is None:
            object.__setattr__(self, "subspace", SubspaceConfig())
        first_batch = self.batch_size or (
            self.subspace.m0 if self.method == "nest_bo_sub" else self.benchmark.dim
        )
        if self.budget < self.init_points + first_batch:
            raise ValueError("budget must be >= init_points + batch_size")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")

    def loop_config(self) -> LoopConfig:
        if self.method == "gibo":
            return LoopConfig(
                acq=replace(self.acq, criterion="gi"),
                batch_size=self.batch_size,
                refit_every=self.refit_every,
                fit_restarts=self.fit_restarts,
                step_rule="fixed",
                step_size=self.step_size,
                direction_rule="gradient",
            )
        return LoopConfig(
            acq=self.acq,
            batch_size=self.batch_size,
            refit_every=self.refit_every,
            fit_restarts=self.fit_restarts,
            step_size=min(self.step_size, 1.0),
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "benchmark" not in data:
            raise ValueError("config needs a [benchmark] table")
        bench = data.pop("benchmark")
        if not isinstance(bench, dict):
            raise ValueError("benchmark must be a table")
        data["benchmark"] = BenchmarkDef(**bench)
        if "acq" in data:
            data["acq"] = AcqConfig(**data["acq"])
        if data.get("subspace") is not None:
            data["subspace"] = SubspaceConfig(**data["subspace"])
        return cls(**data)


def load_config(path) -> ExperimentConfig:
    """Read a TOML experiment file (schema: fields of :class:`ExperimentConfig`)."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib

    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ValueError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class RunTrace:
    config: dict
    benchmark: dict
    points: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    best: list = field(default_factory=list)
    regret: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    split_events: list = field(default_factory=list)
    failed: bool = False
    error: str | None = None

    @property
    def n_evals(self) -> int:
        return len(self.ys)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eval_index", "y", "best_so_far", "regret"])
        for i, (y, b, r) in enumerate(zip(self.ys, self.best, self.regret)):
            w.writerow([i, repr(y), repr(b), "" if r is None else repr(r)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "benchmark": self.benchmark,
            "failed": self.failed,
            "error": self.error,
            "evaluations": [
                {"eval_index": i, "point": p, "y": y, "best_so_far": b, "regret": r}
                for i, (p, y, b, r) in enumerate(zip(self.points, self.ys, self.best, self.regret))
            ],
            "iterations": self.iterations,
            "split_events": self.split_events,
        }

    def json_text(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=1) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


class _Recorder:
    """Evaluates ambient points, enforces the budget and fills the trace."""

    def __init__(self, spec: bf.BenchmarkSpec, budget: int, trace: RunTrace, noise_rng):
        self.spec = spec
        self.budget = budget
        self.trace = trace
        self.noise_rng = noise_rng
        self._best = math.inf
        self._best_true = math.inf

    @property
    def remaining(self) -> int:
        return self.budget - self.trace.n_evals

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if X.shape[0] > self.remaining:
            raise RuntimeError("evaluation budget exceeded")
        out = np.empty(X.shape[0])
        for r, x in enumerate(X):
            y = bf.evaluate(self.spec, x, self.noise_rng)
            out[r] = y
            self._best = min(self._best, y)
            t = self.trace
            t.points.append(x.tolist())
            t.ys.append(float(y))
            t.best.append(self._best)
            if self.spec.optimum_value is None:
                t.regret.append(None)
            else:
                f0 = y if self.spec.noise_std == 0 else bf.noiseless_value(self.spec, x)
                self._best_true = min(self._best_true, f0)
                t.regret.append(max(0.0, self._best_true - self.spec.optimum_value))
        return out


# ---------------------------------------------------------------------------
# Method loops
# ---------------------------------------------------------------------------


def _iteration_record(state, step, info, dim) -> dict:
    return {
        "iterate": state.x.tolist(),
        "kind": step.kind,
        "gamma": step.step_size,
        "acq_value": float(info.acq_values[-1]) if len(info.acq_values) else None,
        "pi_g": info.pi_g,
        "pi_h": info.pi_h,
        "scale": info.scale,
        "subspace_dim": dim,
        "batch": len(info.targets),
    }


def _batch_for(remaining: int, b: int, loop: LoopConfig) -> tuple[int, LoopConfig]:
    """Batch size and loop settings that never overrun the remaining budget."""
    if remaining >= 2 or not loop.evaluate_iterate:
        extra = 1 if loop.evaluate_iterate else 0
        return max(1, min(b, remaining - extra)), loop
    return 1, replace(loop, evaluate_iterate=False)


def _run_local(cfg, spec, rec, x0_unit, U0, rng, trace):
    """NeST-BO / GIBO in the unit cube of the benchmark box."""
    lo, hi = spec.lower, spec.upper

    def objective(U):
        return rec(lo + np.asarray(U) * (hi - lo))

    y0 = objective(U0)
    gp = fit_and_condition(U0, y0, None, max(cfg.fit_restarts, 3), rng)
    state = IterState(x0_unit, gp)
    loop = cfg.loop_config()
    b_default = cfg.batch_size or spec.ambient_dim
    while rec.remaining > 0:
        b, lc = _batch_for(rec.remaining, b_default, loop)
        state, step, info = nest_bo_iterate(state, objective, lc, rng, b)
        rec_it = _iteration_record(state, step, info, None)
        rec_it["iterate"] = (lo + state.x * (hi - lo)).tolist()
        trace.iterations.append(rec_it)


def _run_subspace(cfg, spec, rec, rng, init_rng, trace):
    """NeST-BO inside a nested sparse sign embedding.

    GP inputs are unit-cube coordinates u = (v + 1) / 2 of subspace points v.
    """
    scfg = cfg.subspace
    emb = sub.new_embedding(spec.ambient_dim, min(scfg.m0, spec.ambient_dim), rng)
    bounds = spec.bounds

    def objective(U):
        V = 2.0 * np.asarray(U) - 1.0
        return rec(sub.project_up(emb, np.atleast_2d(V), bounds))

    m = emb.target_dim
    u0 = init_rng.uniform(0.0, 1.0, m)
    U0 = np.vstack([u0, _sobol(m, cfg.init_points - 1, init_rng)])
    y0 = objective(U0)
    gp = fit_and_condition(U0, y0, None, max(cfg.fit_restarts, 3), rng)
    state = IterState(u0, gp)
    loop = cfg.loop_config()
    incumbents: list[float] = []
    while rec.remaining > 0:
        b, lc = _batch_for(rec.remaining, cfg.batch_size or emb.target_dim, loop)
        state, step, info = nest_bo_iterate(state, objective, lc, rng, b)
        it = _iteration_record(state, step, info, emb.target_dim)
        it["iterate"] = sub.project_up(emb, 2.0 * state.x - 1.0, bounds).tolist()
        trace.iterations.append(it)
        incumbents.append(float(np.min(state.gp.dataset.targets)))
        if rec.remaining > 0 and not emb.saturated and sub.should_expand(incumbents, scfg.window):
            U = state.gp.inputs
            X_before = sub.project_up(emb, 2.0 * U - 1.0, bounds)
            new_emb, U_lift, saturated = sub.split(emb, U, rng)
            if saturated:
                continue
            X_after = sub.project_up(new_emb, 2.0 * U_lift - 1.0, bounds)
            x_lift = state.x[list(new_emb.history[-1].parent_of)]
            preserved = bool(np.array_equal(X_before, X_after))
            trace.split_events.append(
                {
                    "after_eval": trace.n_evals,
                    "old_dim": emb.target_dim,
                    "new_dim": new_emb.target_dim,
                    "preserved": preserved,
                }
            )
            if not preserved:
                raise RuntimeError("split changed ambient images of existing data")
            emb = new_emb
            gp = fit_and_condition(U_lift, state.gp.dataset.targets, None, max(cfg.fit_restarts, 3), rng)
            state = IterState(x_lift, gp, state.iteration)
            incumbents = []
    trace.benchmark["embedding"] = emb.to_dict()


def run_replicate(cfg: ExperimentConfig) -> RunTrace:
    """One seeded run; module errors leave a partial trace flagged ``failed``."""
    spec = cfg.benchmark.build(_stream(cfg.seed, "benchmark"))
    trace = RunTrace(config=_jsonable(cfg.to_dict()), benchmark=_jsonable(spec.to_dict()))
    rec = _Recorder(spec, cfg.budget, trace, _stream(cfg.seed, "noise"))
    init_rng = _stream(cfg.seed, "init")
    rng = _stream(cfg.seed, "method")
    d = spec.ambient_dim
    lo, hi = spec.lower, spec.upper
    try:
        if cfg.method == "nest_bo_sub":
            _run_subspace(cfg, spec, rec, rng, init_rng, trace)
            return trace
        x0 = init_rng.uniform(0.0, 1.0, d)
        if cfg.method == "sobol_random":
            U = np.vstack([x0, _sobol(d, cfg.budget - 1, init_rng)])
            rec(lo + U * (hi - lo))
            return trace
        U0 = np.vstack([x0, _sobol(d, cfg.init_points - 1, init_rng)])
        _run_local(cfg, spec, rec, x0, U0, rng, trace)
    except Exception as exc:  # noqa: BLE001 - any module error aborts the replicate
        log.warning("replicate seed=%d failed: %s", cfg.seed, exc)
        trace.failed = True
        trace.error = f"{type(exc).__name__}: {exc}"
    return trace


# ---------------------------------------------------------------------------
# Aggregation and experiment driver
# ---------------------------------------------------------------------------


def _median_se(cols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    med = np.median(cols, axis=0)
    n = cols.shape[0]
    se = np.std(cols, axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(cols.shape[1])
    return med, se


def aggregate(traces: list[RunTrace]) -> dict:
    """Per-evaluation medians and standard errors over successful replicates."""
    ok = [t for t in traces if not t.failed and t.n_evals > 0]
    out = {"replicates": len(traces), "succeeded": len(ok), "rows": []}
    if not ok:
        return out
    n = min(t.n_evals for t in ok)
    B = np.array([t.best[:n] for t in ok])
    mb, sb = _median_se(B)
    has_regret = all(r is not None for t in ok for r in t.regret[:n])
    if has_regret:
        R = np.array([t.regret[:n] for t in ok], dtype=float)
        mr, sr = _median_se(R)
    for i in range(n):
        out["rows"].append(
            {
                "eval_index": i,
                "count": len(ok),
                "median_best": float(mb[i]),
                "se_best": float(sb[i]),
                "median_regret": float(mr[i]) if has_regret else None,
                "se_regret": float(sr[i]) if has_regret else None,
            }
        )
    out["final_median_best"] = float(mb[-1])
    out["final_median_regret"] = float(mr[-1]) if has_regret else None
    return out


def aggregate_csv(agg: dict) -> str:
    buf = io.StringIO()
    cols = ["eval_index", "count", "median_best", "se_best", "median_regret", "se_regret"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in agg["rows"]:
        w.writerow(["" if row[c] is None else repr(row[c]) for c in cols])
    return buf.getvalue()


def run_replicates(cfg: ExperimentConfig, replicates: int = 1, jobs: int = 1) -> list[RunTrace]:
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    cfgs = [replace(cfg, seed=cfg.seed + r) for r in range(replicates)]
    if jobs > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run_replicate, cfgs))
    return [run_replicate(c) for c in cfgs]


def write_experiment(out_dir, name: str, cfg: ExperimentConfig, traces: list[RunTrace]) -> dict:
    root = Path(out_dir) / name
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(
        json.dumps(_jsonable(cfg.to_dict()), sort_keys=True, indent=1) + "\n"
    )
    for t in traces:
        seed = t.config["seed"]
        (root / f"replicate_{seed}.csv").write_text(t.csv_text())
        (root / f"replicate_{seed}.json").write_text(t.json_text())
    agg = aggregate(traces)
    (root / "aggregate.csv").write_text(aggregate_csv(agg))
    (root / "aggregate.json").write_text(json.dumps(_jsonable(agg), sort_keys=True, indent=1) + "\n")
    return agg


def run_experiment(cfg: ExperimentConfig, replicates: int = 1, jobs: int = 1, out_dir=None) -> dict:
    """Replicates with seeds ``cfg.seed .. cfg.seed + replicates - 1``; writes files if ``out_dir``."""
    traces = run_replicates(cfg, replicates, jobs)
    if out_dir is not None:
        return write_experiment(out_dir, cfg.name, cfg, traces)
    return aggregate(traces)


# ---------------------------------------------------------------------------
# Scale-factor study (Newton-step error with frozen hyperparameters)
# ---------------------------------------------------------------------------

SCALE_METHODS = ("nest_s1", "nest_plugin", "nest_mc", "gi", "random")


class _GriewankUnit:
    """Griewank restricted to [0, 1]^d with analytic derivatives."""

    def __init__(self, d: int):
        self.dim = d

    def __call__(self, x):
        return bf.griewank(np.asarray(x))

    def grad(self, x):
        return bf.griewank_grad(np.asarray(x))

    def hess(self, x):
        return bf.griewank_hess(np.asarray(x))


def scale_study_acq(method: str) -> AcqConfig | None:
    whole = {"box_radius": 1.0}
    return {
        "nest_s1": AcqConfig(scale_mode="fixed", scale_value=1.0, **whole),
        "nest_plugin": AcqConfig(scale_mode="plugin", **whole),
        "nest_mc": AcqConfig(scale_mode="monte_carlo", mc_samples=32, **whole),
        "gi": AcqConfig(criterion="gi", **whole),
        "random": None,
    }[method]


def scale_study_replicate(d: int, method: str, seed: int, budget: int = 100, init_points=None,
                          fit_points: int = 50) -> dict:
    """One optimization run from a random start, tracking the Newton-step error.

    Hyperparameters and target standardization are fit once on ``fit_points``
    separate Sobol samples (same for every method with this seed) and frozen.
    Each iteration adds ``d`` points chosen for the current iterate, records
    the error of the estimated step at that iterate, then takes the damped
    Newton step. Only batch points count against ``budget``.
    """
    if method not in SCALE_METHODS:
        raise ValueError(f"method must be one of {SCALE_METHODS}")
    f = _GriewankUnit(d)
    init_points = init_points or {2: 5, 3: 10, 4: 20, 5: 30}.get(d, 10 * d)
    bench_rng = _stream(seed, "benchmark")
    X_fit = _sobol(d, fit_points, bench_rng)
    y_fit = np.array([f(x) for x in X_fit])
    params = fit_hyperparams(X_fit, y_fit, restarts=3, rng=bench_rng).params
    y_mean, y_scale = float(np.mean(y_fit)), float(np.std(y_fit)) or 1.0

    init_rng = _stream(seed, "init")
    x = init_rng.uniform(0.0, 1.0, d)
    x_start = x.copy()
    X = _sobol(d, init_points, init_rng)
    y = np.array([f(p) for p in X])
    rng = _stream(seed, "method")
    acq = scale_study_acq(method)
    step_cfg = LoopConfig()

    def gp_of(X, y):
        return condition(X, y, params, standardize=True, y_mean=y_mean, y_scale=y_scale)

    gp = gp_of(X, y)
    n_evals, errors, iterates = [len(X)], [newton_error(f, x, gp)], [x.tolist()]
    while len(X) < budget:
        b = min(d, budget - len(X))
        if acq is None:
            Z = rng.uniform(0.0, 1.0, (b, d))
        else:
            Z = greedy_batch(gp, x, b, acq, rng=rng)[0]
        X = np.vstack([X, Z])
        y = np.concatenate([y, [f(z) for z in Z]])
        gp = gp_of(X, y)
        n_evals.append(len(X))
        errors.append(newton_error(f, x, gp))
        x = take_step(gp, x, step_cfg)[0].new_iterate
        iterates.append(x.tolist())
    return {
        "d": d,
        "method": method,
        "seed": seed,
        "start": x_start.tolist(),
        "iterates": iterates,
        "n_evals": n_evals,
        "newton_error": errors,
        "best_value": float(np.min(y)),
    }


def _scale_job(args):
    return scale_study_replicate(*args)


def scale_study(dims=(2, 3), methods=SCALE_METHODS, replicates: int = 10, seed: int = 0,
                budget: int = 100, jobs: int = 1) -> dict:
    """Median final Newton-step error per (d, method); skipped (singular) iterates are dropped."""
    jobs_list = [(d, m, seed + r, budget) for d in dims for m in methods for r in range(replicates)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_scale_job, jobs_list))
    else:
        runs = [_scale_job(a) for a in jobs_list]
    summary = {}
    for d in dims:
        for m in methods:
            finals = [
                r["newton_error"][-1]
                for r in runs
                if r["d"] == d and r["method"] == m and r["newton_error"][-1] is not None
            ]
            summary[f"d{d}_{m}"] = {
                "d": d,
                "method": m,
                "count": len(finals),
                "median_final_error": float(np.median(finals)) if finals else None,
            }
    return {"summary": summary, "runs": runs}


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def batch_preset(function: str = "griewank", d: int = 10, budget: int = 300, seed: int = 0):
    """b in {0.2d, d, 2d}, 10 Sobol initial points."""
    out = []
    for label, b in (("b02d", max(1, round(0.2 * d))), ("b1d", d), ("b2d", 2 * d)):
        out.append(
            ExperimentConfig(
                benchmark=BenchmarkDef(function, d),
                method="nest_bo",
                budget=budget,
                batch_size=b,
                init_points=10,
                seed=seed,
                name=f"batch_{function}{d}_{label}",
            )
        )
    return out


def stepsize_preset(d: int = 4, budget: int = 300, seed: int = 0):
    """NeST-BO with line search versus GIBO with eta in {1.0, 0.5, 0.1} on Rosenbrock."""
    bench = BenchmarkDef("rosenbrock", d)
    out = [ExperimentConfig(bench, "nest_bo", budget, seed=seed, name=f"step_rosenbrock{d}_nest")]
    for eta in (1.0, 0.5, 0.1):
        out.append(
            ExperimentConfig(
                bench, "gibo", budget, seed=seed, step_size=eta,
                name=f"step_rosenbrock{d}_gibo_eta{eta}",
            )
        )
    return out


__all__ = [
    "BenchmarkDef",
    "ExperimentConfig",
    "RunTrace",
    "SubspaceConfig",
    "aggregate",
    "batch_preset",
    "load_config",
    "run_experiment",
    "run_replicate",
    "run_replicates",
    "scale_study",
    "scale_study_replicate",
    "stepsize_preset",
    "write_experiment",
]

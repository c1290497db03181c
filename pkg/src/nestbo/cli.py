"""Command-line entry point: ``nestbo {run,sweep,vpc,verify}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness, oracle
from . import kernel as kern
from .gp import Lookahead, condition, fit_hyperparams
from .kernel import KernelParams

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; we want 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    p.add_argument("--out-dir", default="results", help="output root directory")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1, help="parallel replicates")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nestbo", description=__doc__.splitlines()[0])
    subs = ap.add_subparsers(dest="command", parser_class=_Parser)
    subs.required = True

    p = subs.add_parser("run", help="run one experiment from a TOML config")
    p.add_argument("--config", required=True)
    _common(p)

    p = subs.add_parser("sweep", help="preset ablations")
    p.add_argument("--preset", required=True, choices=("scale", "batch", "stepsize"))
    p.add_argument("--function", default="griewank", help="batch preset benchmark")
    p.add_argument("--budget", type=int, default=None)
    _common(p)

    p = subs.add_parser("vpc", help="power functions on a shrinking symmetric stencil")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--h", type=float, nargs="+", default=[0.5, 0.2, 0.1])
    p.add_argument("--replicas", type=int, default=1, help="copies of each stencil point")
    p.add_argument("--noise", type=float, default=1e-10)

    subs.add_parser("verify", help="quick built-in property checks")
    return ap


def _cmd_run(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        print(f"config file not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = harness.load_config(path)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
    except (ValueError, OSError) as exc:
        print(f"invalid config {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    agg = harness.run_experiment(cfg, args.replicates, args.jobs, args.out_dir)
    print(f"{cfg.name}: {agg['succeeded']}/{agg['replicates']} replicates ok, "
          f"final median best {agg.get('final_median_best')}")
    return EXIT_OK if agg["succeeded"] == agg["replicates"] else EXIT_RUNTIME


def _cmd_sweep(args) -> int:
    seed = args.seed or 0
    out = Path(args.out_dir)
    if args.preset == "scale":
        res = harness.scale_study(
            replicates=args.replicates, seed=seed, budget=args.budget or 100, jobs=args.jobs
        )
        root = out / "scale_study"
        root.mkdir(parents=True, exist_ok=True)
        (root / "scale_study.json").write_text(json.dumps(res, sort_keys=True, indent=1) + "\n")
        for key, row in res["summary"].items():
            print(key, row["count"], row["median_final_error"])
        return EXIT_OK
    if args.preset == "batch":
        cfgs = harness.batch_preset(args.function, 10, args.budget or 300, seed)
    else:
        cfgs = harness.stepsize_preset(4, args.budget or 300, seed)
    ok = True
    for cfg in cfgs:
        agg = harness.run_experiment(cfg, args.replicates, args.jobs, out)
        ok &= agg["succeeded"] == agg["replicates"]
        print(cfg.name, agg.get("final_median_regret"))
    return EXIT_OK if ok else EXIT_RUNTIME


def _cmd_vpc(args) -> int:
    if args.dim < 1:
        print("--dim must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    params = KernelParams(1.0, np.ones(args.dim), args.noise)
    rows = oracle.vpc_check(params, args.dim, args.h, jitter=0.0, replicates=args.replicas)
    sys.stdout.write(oracle.vpc_csv(rows))
    return EXIT_RUNTIME if any(r.failed for r in rows) else EXIT_OK


def _verify_checks():
    rng = np.random.default_rng(0)

    def kernel_fd():
        for _ in range(20):
            d = 3
            p = KernelParams(rng.uniform(0.5, 2), rng.uniform(0.5, 2, d), 1e-4)
            x, xp = rng.normal(size=d), rng.normal(size=d)
            i, j = rng.integers(d, size=2)
            g = oracle.fd_gradient(lambda z: kern.k(z, xp, p), x, oracle.FD_STEP_LOW * p.lengthscales)
            assert np.isclose(kern.dk_dx(x, xp, p, i), g[i], rtol=1e-5, atol=1e-9)
            h4 = oracle.fd_d4k(x, xp, p, i, j)
            assert np.isclose(kern.d4k(x, xp, p, i, j), h4, rtol=1e-3, atol=1e-6)

    def brute_force():
        for d in (1, 2, 3):
            X = rng.uniform(size=(8, d))
            y = np.sin(X.sum(1) * 3)
            gp = condition(X, y, fit_hyperparams(X, y, restarts=1, rng=1).params, standardize=True)
            x = rng.uniform(size=d)
            fast = Lookahead(gp, x).powers()[1] * gp.y_scale**2
            assert np.isclose(fast, oracle.brute_force_pi_h(gp, x), rtol=1e-8)

    def monotone():
        p = KernelParams(1.0, np.ones(2), 1e-6)
        gp = condition(rng.uniform(size=(5, 2)), rng.normal(size=5), p)
        x = rng.uniform(size=2)
        la = Lookahead(gp, x)
        before = la.powers()
        after = la.append(rng.uniform(size=2))[0].powers()
        assert after[0] <= before[0] + 1e-8 and after[1] <= before[1] + 1e-8

    def vpc():
        rows = oracle.vpc_check(KernelParams(1.0, np.ones(2), 0.0), 2)
        totals = [r.total for r in rows]
        assert np.allclose(totals[0], 10.0)
        assert all(a > b for a, b in zip(totals, totals[1:]))

    def stencil():
        for d in range(1, 9):
            assert oracle.make_stencil(np.zeros(d), 0.1).size == d * d + d + 1

    return [kernel_fd, brute_force, monotone, vpc, stencil]


def _cmd_verify(args) -> int:
    failed = 0
    for check in _verify_checks():
        try:
            check()
            print(f"PASS {check.__name__}")
        except AssertionError:
            failed += 1
            print(f"FAIL {check.__name__}")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "vpc": _cmd_vpc, "verify": _cmd_verify}
    try:
        return handler[args.command](args)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line entry points: benchmark runs and reference-value oracles."""

from __future__ import annotations

import argparse
import sys

import numpy as np


def _cmd_run(args) -> int:
    from .harness import BenchmarkSpec, emit_plot, run

    spec = BenchmarkSpec.from_json(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    records = run(spec, out_csv=args.out, timing=args.timing)
    if records:
        final = [r.immediate_regret for r in records if r.iteration == max(x.iteration for x in records)]
        print(f"{spec.acquisition} on {spec.objective}: "
              f"final log-mean IR = {np.log(np.mean(final)):.4f} over {spec.repeats} repeats")
    if args.plot:
        if args.out is None:
            print("--plot requires --out", file=sys.stderr)
            return 2
        emit_plot(args.out, args.plot)
    return 0


def _oracle_bivariate_argmax_moments(n=1_000_000, seed=0):
    """Brute-force moments of a standard bivariate Gaussian given f0 > f1."""
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((n, 2))
    kept = draws[draws[:, 0] > draws[:, 1]]
    mean = kept.mean(axis=0)
    cov = np.cov(kept.T)
    print(f"accepted {kept.shape[0]}/{n}")
    print(f"mean = {mean}  (analytic: (1/sqrt(pi), -1/sqrt(pi)) = "
          f"({1/np.sqrt(np.pi):.6f}, {-1/np.sqrt(np.pi):.6f}))")
    print(f"cov  =\n{cov}")


def _oracle_orthant_correlated(n=1_000_000, seed=0):
    """Brute-force argmax frequencies for a fixed correlated 3-point Gaussian."""
    rng = np.random.default_rng(seed)
    cov = np.array([[1.0, 0.6, 0.2], [0.6, 1.0, 0.4], [0.2, 0.4, 1.0]])
    mean = np.array([0.1, 0.0, -0.1])
    L = np.linalg.cholesky(cov)
    draws = mean + rng.standard_normal((n, 3)) @ L.T
    counts = np.bincount(np.argmax(draws, axis=1), minlength=3)
    probs = counts / n
    stderr = np.sqrt(probs * (1 - probs) / n)
    print(f"mean = {mean}, cov =\n{cov}")
    for i in range(3):
        print(f"p(argmax = {i}) = {probs[i]:.5f} +- {stderr[i]:.5f}")


def _oracle_objective_optimum(name):
    from scipy.optimize import minimize

    from .objectives import objective

    obj = objective(name)
    rng = np.random.default_rng(0)
    bounds = list(zip(obj.domain.lower, obj.domain.upper))
    best = np.inf
    best_x = None
    for x0 in obj.domain.sample_uniform(4000, rng):
        res = minimize(lambda x: -obj(x[None, :])[0], x0, method="L-BFGS-B", bounds=bounds)
        if res.fun < best:
            best, best_x = res.fun, res.x
    print(f"{name}: searched optimum = {-best:.12f} at {best_x}")
    print(f"{name}: stored optimum   = {obj.optimum:.12f}")


ORACLES = {
    "bivariate-argmax-moments": lambda: _oracle_bivariate_argmax_moments(),
    "orthant-correlated": lambda: _oracle_orthant_correlated(),
    "branin-optimum": lambda: _oracle_objective_optimum("branin"),
    "hartmann3-optimum": lambda: _oracle_objective_optimum("hartmann3"),
    "hartmann4-optimum": lambda: _oracle_objective_optimum("hartmann4"),
}


def _cmd_oracle(args) -> int:
    fn = ORACLES.get(args.check)
    if fn is None:
        print(f"unknown oracle {args.check!r}; available: {', '.join(sorted(ORACLES))}",
              file=sys.stderr)
        return 2
    fn()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="tesbo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark from a JSON config")
    p_run.add_argument("--config", required=True, help="path to a JSON benchmark spec")
    p_run.add_argument("--out", default=None, help="results CSV path")
    p_run.add_argument("--plot", default=None, help="SVG plot path (requires --out)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--timing", action="store_true",
                       help="record wall times (breaks byte-level CSV determinism)")
    p_run.set_defaults(func=_cmd_run)

    p_oracle = sub.add_parser("oracle", help="print independently computed reference values")
    p_oracle.add_argument("check", help="oracle name")
    p_oracle.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

"""Benchmark harness: seeded BO loops, immediate-regret traces, CSV and plots."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import baselines
from .acquisition import OptConfig, optimize_acquisition
from .gp import Domain, GPPosterior, fit_hyperparams, fit_posterior
from .objectives import Objective, objective
from .sampling import build_trusted_set
from .tes_ep import alpha_ep_value_and_grad, prepare_ep_state
from .tes_sp import alpha_sp_value_and_grad, prepare_sp_state

ACQUISITIONS = ("tes-sp", "tes-ep", "ei", "ucb", "qei-cl")


@dataclass
class BenchmarkSpec:
    """Full description of one benchmark run; mirrors the JSON config."""

    objective: str
    acquisition: str
    iterations: int
    repeats: int = 1
    batch_size: int = 1
    init_points: int = 2
    noise_variance: float = 1e-4
    trusted_set_size: int | None = None
    seed: int = 0
    objective_params: dict = field(default_factory=dict)
    # optimizer tuning knobs (defaults follow the library-wide defaults)
    adam_iterations: int = 300
    adam_learning_rate: float = 0.05
    y_samples_per_step: int = 1000
    restarts: int | None = None
    total_draws: int = 2000
    n_features: int = 1024
    mc_prob_samples: int = 10_000
    hyperfit_restarts: int = 10

    def __post_init__(self):
        if self.acquisition not in ACQUISITIONS:
            raise ValueError(f"unknown acquisition {self.acquisition!r}; pick one of {ACQUISITIONS}")
        if self.iterations < 1 or self.repeats < 1 or self.init_points < 1:
            raise ValueError("iterations, repeats, and init_points must all be at least 1")
        if self.trusted_set_size is None:
            self.trusted_set_size = 5 if self.batch_size <= 3 else self.batch_size
        if self.trusted_set_size < self.batch_size:
            raise ValueError("trusted_set_size must be at least batch_size")

    @staticmethod
    def from_json(path: str) -> "BenchmarkSpec":
        with open(path) as fh:
            data = json.load(fh)
        known = {f.name for f in fields(BenchmarkSpec)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return BenchmarkSpec(**data)


@dataclass
class RunRecord:
    repeat_index: int
    iteration: int
    queried_points: np.ndarray  # (B, d)
    observations: np.ndarray  # (B,)
    incumbent: np.ndarray  # (d,)
    immediate_regret: float
    wall_time_ms: float


def immediate_regret(
    post: GPPosterior,
    obj: Objective,
    domain: Domain,
    restarts: int = 10,
) -> tuple[np.ndarray, float]:
    """Maximizer of the posterior mean and the noiseless regret there."""
    from scipy.optimize import minimize

    rng = np.random.default_rng(1234)
    bounds = list(zip(domain.lower, domain.upper))

    def neg(x):
        mean, _ = post.predict(x[None, :])
        return -float(mean[0]), -post.predict_mean_grad(x)

    starts = [domain.sample_uniform(1, rng)[0] for _ in range(restarts)]
    if post.n_train:
        starts.append(post.X[int(np.argmax(post.y))])
    best_x, best_val = starts[0], np.inf
    for x0 in starts:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        if res.fun < best_val:
            best_val, best_x = res.fun, res.x
    x_bar = domain.clip(best_x)
    ir = obj.optimum - float(obj(x_bar[None, :])[0])
    return x_bar, ir


def _standardize(y: np.ndarray) -> tuple[np.ndarray, float, float]:
    mu = float(np.mean(y))
    std = float(np.std(y))
    std = std if std > 1e-12 else 1.0
    return (y - mu) / std, mu, std


def _select_batch(
    spec: BenchmarkSpec,
    post: GPPosterior,
    domain: Domain,
    iteration: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One acquisition decision on the standardized posterior."""
    name = spec.acquisition
    if name == "ei":
        if spec.batch_size != 1:
            raise ValueError("ei is a single-query acquisition; use qei-cl for batches")
        incumbent = float(np.max(post.y))
        x = baselines.maximize_deterministic(
            lambda x: baselines.ei(post, x, incumbent), domain, rng
        )
        return x[None, :]
    if name == "ucb":
        if spec.batch_size != 1:
            raise ValueError("ucb is a single-query acquisition")
        beta = baselines.ucb_beta_schedule(domain.dim, iteration)
        x = baselines.maximize_deterministic(
            lambda x: baselines.ucb(post, x, beta), domain, rng
        )
        return x[None, :]
    if name == "qei-cl":
        incumbent = float(np.max(post.y))
        return baselines.constant_liar_batch(
            post, incumbent, spec.batch_size, domain, rng
        )

    trusted = build_trusted_set(
        post,
        spec.trusted_set_size,
        domain,
        rng,
        n_features=spec.n_features,
        mc_samples=spec.mc_prob_samples,
    )
    config = OptConfig(
        learning_rate=spec.adam_learning_rate,
        iterations=spec.adam_iterations,
        y_samples_per_step=spec.y_samples_per_step,
        restarts=spec.restarts,
    )
    if name == "tes-sp":
        state = prepare_sp_state(post, trusted, rng, total_draws=spec.total_draws)

        def handle(x, r, n_y):
            return alpha_sp_value_and_grad(state, x, r, n_y=n_y)

    else:  # tes-ep
        state = prepare_ep_state(post, trusted)

        def handle(x, r, n_y):
            return alpha_ep_value_and_grad(state, x, r, n_y=n_y)

    trusted = state.trusted  # grouping may have dropped empty groups
    batch, _, _ = optimize_acquisition(
        handle, trusted, domain, spec.batch_size, config, rng
    )
    return batch


def run(spec: BenchmarkSpec, out_csv: str | None = None, timing: bool = False) -> list[RunRecord]:
    """Execute the benchmark: repeats x iterations of the BO loop.

    Observations are standardized before each model fit and predictions are
    made in standardized space; regret is always computed on the noiseless
    objective. When ``timing`` is off the wall-time column is zeroed so
    identical seeds produce byte-identical CSV files.
    """
    obj = objective(spec.objective, seed=spec.seed, **spec.objective_params)
    domain = obj.domain
    records: list[RunRecord] = []
    for rep in range(spec.repeats):
        rng = np.random.default_rng([spec.seed, rep])
        X = domain.sample_uniform(spec.init_points, rng)
        y = obj(X) + rng.normal(0.0, np.sqrt(spec.noise_variance), size=X.shape[0])
        for it in range(1, spec.iterations + 1):
            t0 = time.perf_counter()
            try:
                ys, mu_y, std_y = _standardize(y)
                hp = fit_hyperparams(
                    X, ys, domain, n_restarts=spec.hyperfit_restarts, rng=rng,
                )
                post = fit_posterior(X, ys, hp)
                batch = _select_batch(spec, post, domain, it, rng)
                obs = obj(batch) + rng.normal(
                    0.0, np.sqrt(spec.noise_variance), size=batch.shape[0]
                )
            except Exception as exc:  # record partial trace, keep other repeats
                import warnings

                warnings.warn(f"repeat {rep} aborted at iteration {it}: {exc}")
                break
            X = np.vstack([X, batch])
            y = np.append(y, obs)
            ys, _, _ = _standardize(y)
            hp2 = post.hyperparams
            post_full = fit_posterior(X, ys, hp2)
            x_bar, ir = immediate_regret(post_full, obj, domain)
            elapsed = (time.perf_counter() - t0) * 1000.0 if timing else 0.0
            records.append(
                RunRecord(
                    repeat_index=rep,
                    iteration=it,
                    queried_points=batch,
                    observations=obs,
                    incumbent=x_bar,
                    immediate_regret=ir,
                    wall_time_ms=elapsed,
                )
            )
    if out_csv is not None:
        write_csv(records, obj.domain.dim, out_csv)
        write_aggregate(records, _aggregate_path(out_csv))
    return records


def _aggregate_path(out_csv: str) -> str:
    stem = out_csv[:-4] if out_csv.endswith(".csv") else out_csv
    return stem + "_aggregate.csv"


def write_csv(records: list[RunRecord], dim: int, path: str) -> None:
    """One row per (repeat, iteration, point) with the fixed schema."""
    header = (
        ["repeat", "iteration", "point_index"]
        + [f"dim_{i}" for i in range(dim)]
        + ["observation"]
        + [f"incumbent_{i}" for i in range(dim)]
        + ["immediate_regret", "wall_time_ms"]
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in records:
            for p_idx in range(rec.queried_points.shape[0]):
                w.writerow(
                    [rec.repeat_index, rec.iteration, p_idx]
                    + [repr(v) for v in rec.queried_points[p_idx]]
                    + [repr(rec.observations[p_idx])]
                    + [repr(v) for v in rec.incumbent]
                    + [repr(rec.immediate_regret), repr(rec.wall_time_ms)]
                )


def write_aggregate(records: list[RunRecord], path: str) -> None:
    """Log-mean immediate regret per iteration plus per-repeat final regret."""
    by_iter: dict[int, list[float]] = {}
    final_by_rep: dict[int, float] = {}
    for rec in records:
        by_iter.setdefault(rec.iteration, []).append(rec.immediate_regret)
        final_by_rep[rec.repeat_index] = rec.immediate_regret
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "value"])
        for it in sorted(by_iter):
            w.writerow(["log_mean_ir", it, repr(float(np.log(np.mean(by_iter[it]))))])
        for rep in sorted(final_by_rep):
            w.writerow(["final_ir", rep, repr(final_by_rep[rep])])


def read_csv_regrets(path: str) -> dict[str, dict[int, dict[int, float]]]:
    """Parse a results CSV into {series: {repeat: {iteration: regret}}}.

    Accepts the fixed schema, optionally prefixed by an ``acquisition``
    column for files holding several series.
    """
    out: dict[str, dict[int, dict[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}:1: empty CSV")
        has_series = header and header[0] == "acquisition"
        base = 1 if has_series else 0
        if header[base:base + 3] != ["repeat", "iteration", "point_index"]:
            raise ValueError(f"{path}:1: unexpected header {header!r}")
        try:
            ir_col = header.index("immediate_regret")
        except ValueError:
            raise ValueError(f"{path}:1: missing immediate_regret column")
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                series = row[0] if has_series else "run"
                rep, it = int(row[base]), int(row[base + 1])
                ir = float(row[ir_col])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {exc}")
            out.setdefault(series, {}).setdefault(rep, {})[it] = ir
            n_rows += 1
    if n_rows == 0:
        raise ValueError(f"{path}: no data rows")
    return out


def emit_plot(csv_path: str, out_path: str) -> None:
    """Write a deterministic SVG line chart of log-mean regret vs iteration."""
    series = read_csv_regrets(csv_path)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "tesbo"
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in sorted(series):
        reps = series[name]
        iters = sorted({it for rep in reps.values() for it in rep})
        curve = [np.log(np.mean([reps[r][it] for r in reps if it in reps[r]])) for it in iters]
        ax.plot(iters, curve, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("ln(mean immediate regret)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)

"""Parameter sweeps and two-stage configuration search.

A sweep plan names the axes (policies, cluster sizes, loads, size-law covs or
a trace) and the budget (jobs, replications, base seed). Execution uses
common random numbers: every policy and every two-stage candidate at the same
(rho, cov, replication) sees the identical workload, so comparisons are
paired. Output rows follow the fixed results schema and are emitted in a
canonical sort order, making whole sweep outputs byte-reproducible.

Two-stage search evaluates a grid of theta quantiles x stage-0 sizes under
the same paired workloads and returns the full grid plus the optimum; the
optimum tie-breaks deterministically toward larger theta, then larger n1.

Set DISPATCHSIM_WORKERS=k (or pass workers=k) to spread sweep points over a
process pool; results are identical to the serial order.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

from .analysis import (
    CardThresholds,
    Distribution,
    EmpiricalDistribution,
    WeibullDistribution,
    card_thresholds,
)
from .engine import run
from .metrics import (
    DEFAULT_WARMUP_FRACTION,
    RESULT_FIELDS,
    RunResult,
    replicate_and_summarize,
    result_row,
    summarize_replications,
    summarize_run,
    write_results_csv,
    write_results_json,
)
from .policies import POLICY_KINDS, PolicySpec
from .workload import (
    ClusterConfig,
    Workload,
    calibrate_mu,
    fit_weibull,
    generate_poisson_weibull,
    ingest_trace,
)

DEFAULT_THETA_QUANTILES = (0.5, 0.8, 0.9, 0.95, 0.99, 0.995, 0.999)
RESULT_FIELDS_WITH_QUANTILE = (*RESULT_FIELDS, "theta_quantile")
WORKERS_ENV = "DISPATCHSIM_WORKERS"


def default_n1_candidates(n: int) -> list[int]:
    """Stage-0 sizes to search: every split for small clusters, a coarse
    eighth-spaced grid (always including 1 and n-1) for n > 20."""
    if n < 2:
        return []
    if n <= 20:
        return list(range(1, n))
    points = {1, n - 1}
    for k in range(1, 8):
        points.add(round(k * n / 8))
    return sorted(p for p in points if 1 <= p <= n - 1)


class SyntheticSource:
    """Workload factory for Poisson/Weibull experiments.

    The cluster convention holds total capacity fixed (so adding servers
    makes each slower) and unit mean size; the arrival rate then follows
    from the target load.
    """

    def __init__(self, cov: float, mean_size: float = 1.0, total_capacity: float = 1.0) -> None:
        self.cov = cov
        self.mean_size = mean_size
        self.total_capacity = total_capacity
        self.params = fit_weibull(mean_size, cov)
        self._dist = WeibullDistribution(self.params)

    def distribution(self) -> Distribution:
        return self._dist

    def config(self, n: int, rho: float) -> ClusterConfig:
        return ClusterConfig.synthetic(n, rho, self.mean_size, self.total_capacity)

    def workload(self, n: int, rho: float, jobs: int, rep_seed: int) -> Workload:
        rate = self.config(n, rho).arrival_rate
        return generate_poisson_weibull(rate, self.params, jobs, rep_seed)

    def baseline(self) -> Distribution | None:
        return self._dist

    @property
    def cov_field(self) -> float | None:
        return self.cov


class TraceSource:
    """Workload factory for trace-driven experiments.

    The trace is fixed; replications differ only in policy tie-break streams.
    Server speed is calibrated per (n, rho) so the trace offers the target
    load. Normalized responses are not reported: the empirical second moment
    is dominated by a handful of giant tasks, so an M/G/1 plug-in baseline is
    not a stable yardstick for a single finite trace.
    """

    def __init__(self, workload: Workload, jobs: int | None = None) -> None:
        self._workload = workload.truncated(jobs) if jobs else workload
        self._dist = EmpiricalDistribution.from_workload(self._workload)

    @classmethod
    def from_file(cls, path, jobs: int | None = None) -> "TraceSource":
        return cls(ingest_trace(path), jobs)

    def distribution(self) -> Distribution:
        return self._dist

    def config(self, n: int, rho: float) -> ClusterConfig:
        return calibrate_mu(self._workload, n, rho)

    def workload(self, n: int, rho: float, jobs: int, rep_seed: int) -> Workload:
        return self._workload

    def baseline(self) -> Distribution | None:
        return None

    @property
    def cov_field(self) -> float | None:
        return None


@dataclass(frozen=True)
class SweepPlan:
    """Declarative description of one sweep.

    Axes: policies (labels like "rr" or "two_stage:lwl"), n_values,
    rho_values, and either cov_values (synthetic) or trace (a canonical trace
    CSV path). Two-stage labels trigger a theta/n1 grid search at every
    point and contribute the optimum's rows.
    """

    policies: tuple[str, ...]
    n_values: tuple[int, ...]
    rho_values: tuple[float, ...]
    cov_values: tuple[float, ...] = ()
    trace: str | None = None
    jobs: int = 2_000_000
    replications: int = 5
    base_seed: int = 1
    warmup_fraction: float = DEFAULT_WARMUP_FRACTION
    mean_size: float = 1.0
    total_capacity: float = 1.0
    theta_quantiles: tuple[float, ...] = DEFAULT_THETA_QUANTILES
    n1_candidates: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.policies:
            raise ValueError("plan needs at least one policy")
        for label in self.policies:
            kind = label.split(":", 1)[1] if label.startswith("two_stage:") else label
            if kind not in POLICY_KINDS:
                raise ValueError(f"unknown policy label {label!r}")
            if label.startswith("two_stage:") and kind == "card":
                raise ValueError("two-stage dispatch does not compose with card")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive")
        if not self.rho_values or any(not 0 < r < 1 for r in self.rho_values):
            raise ValueError("rho_values must lie in (0, 1)")
        if bool(self.cov_values) == (self.trace is not None):
            raise ValueError("exactly one of cov_values or trace must be given")
        if self.jobs < 1 or self.replications < 1:
            raise ValueError("jobs and replications must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        for q in self.theta_quantiles:
            if not 0 < q < 1:
                raise ValueError("theta quantiles must lie in (0, 1)")

    @classmethod
    def from_json(cls, text: str) -> "SweepPlan":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("plan JSON must be an object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        for key in ("policies", "n_values", "rho_values", "cov_values",
                    "theta_quantiles", "n1_candidates"):
            if key in data and data[key] is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "SweepPlan":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def to_json(self) -> str:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return json.dumps(data, indent=2)

    def echo(self) -> dict:
        """Flat config echo for result headers."""
        data = asdict(self)
        out = {}
        for key, value in sorted(data.items()):
            if isinstance(value, tuple):
                out[key] = ",".join(str(v) for v in value)
            elif value is None:
                out[key] = ""
            else:
                out[key] = value
        return out


def _source_for(plan: SweepPlan, cov: float | None):
    if plan.trace is not None:
        return TraceSource.from_file(plan.trace, plan.jobs)
    return SyntheticSource(cov, plan.mean_size, plan.total_capacity)


def _single_stage_spec(label: str, dist: Distribution, n: int, rho: float) -> PolicySpec:
    thresholds = card_thresholds(dist, n, rho) if label == "card" else None
    return PolicySpec(kind=label, thresholds=thresholds)


def _run_point(plan: SweepPlan, label: str, n: int, rho: float, cov: float | None,
               source=None) -> tuple[list[dict], list[dict]]:
    """All rows for one (policy, n, rho, cov/trace) point: per-replication
    rows (runs) and one aggregated row (summary)."""
    source = source or _source_for(plan, cov)
    config = source.config(n, rho)
    baseline = source.baseline()
    if label.startswith("two_stage:"):
        inner = label.split(":", 1)[1]
        optimum = optimize_two_stage(
            inner, n, rho, source,
            theta_quantiles=plan.theta_quantiles,
            n1_candidates=plan.n1_candidates or tuple(default_n1_candidates(n)),
            replications=plan.replications,
            jobs=plan.jobs,
            base_seed=plan.base_seed,
            warmup_fraction=plan.warmup_fraction,
        )
        runs = [result_row(r) for r in optimum.best_results]
        summary = summarize_replications(optimum.best_results)
        summary_row = result_row(
            summary.results[0], ci_half_width=summary.ci_half_width,
            seed_override=plan.base_seed,
        )
        summary_row["mrt_seconds"] = summary.mean_mrt_seconds
        summary_row["normalized_mrt"] = summary.mean_normalized_mrt
        return runs, [summary_row]

    spec = _single_stage_spec(label, source.distribution(), n, rho)

    def run_one(rep: int, rep_seed: int) -> RunResult:
        wl = source.workload(n, rho, plan.jobs, rep_seed)
        log = run(wl, config, spec, rep_seed)
        return summarize_run(
            log, warmup_fraction=plan.warmup_fraction,
            baseline=baseline, cov=source.cov_field,
        )

    summary = replicate_and_summarize(run_one, plan.base_seed, plan.replications)
    runs = [result_row(r) for r in summary.results]
    summary_row = result_row(
        summary.results[0], ci_half_width=summary.ci_half_width,
        seed_override=plan.base_seed,
    )
    summary_row["mrt_seconds"] = summary.mean_mrt_seconds
    summary_row["normalized_mrt"] = summary.mean_normalized_mrt
    return runs, [summary_row]


def _point_worker(args):
    plan_json, label, n, rho, cov = args
    plan = SweepPlan.from_json(plan_json)
    return _run_point(plan, label, n, rho, cov)


def _canonical_key(row: dict):
    return (
        row["rho"],
        row["n"],
        -1.0 if row["cov"] is None else row["cov"],
        row["policy"],
        math.inf if row["theta"] is None else row["theta"],
        -1 if row["n1"] is None else row["n1"],
        row["seed"],
    )


def run_sweep(plan: SweepPlan, workers: int | None = None) -> tuple[list[dict], list[dict]]:
    """Execute a sweep; returns (per_replication_rows, summary_rows), both in
    canonical order (rho, n, cov, policy, theta, n1, seed)."""
    covs: tuple = plan.cov_values if plan.trace is None else (None,)
    points = [
        (label, n, rho, cov)
        for rho in plan.rho_values
        for n in plan.n_values
        for cov in covs
        for label in plan.policies
    ]
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    run_rows: list[dict] = []
    summary_rows: list[dict] = []
    if workers > 1 and len(points) > 1:
        plan_json = plan.to_json()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(
                pool.map(_point_worker, [(plan_json, *p) for p in points])
            )
    else:
        # serial path: reuse one source per (cov) and rely on workload
        # regeneration being deterministic per (rho, rep)
        sources = {cov: _source_for(plan, cov) for cov in covs}
        outputs = [
            _run_point(plan, label, n, rho, cov, source=sources[cov])
            for (label, n, rho, cov) in points
        ]
    for runs, summaries in outputs:
        run_rows.extend(runs)
        summary_rows.extend(summaries)
    run_rows.sort(key=_canonical_key)
    summary_rows.sort(key=_canonical_key)
    return run_rows, summary_rows


def write_sweep_outputs(plan: SweepPlan, run_rows, summary_rows, out_prefix) -> list[str]:
    """Write <prefix>_runs.csv, <prefix>_summary.csv, <prefix>_summary.json."""
    echo = plan.echo()
    paths = [
        f"{out_prefix}_runs.csv",
        f"{out_prefix}_summary.csv",
        f"{out_prefix}_summary.json",
    ]
    write_results_csv(paths[0], run_rows, echo)
    write_results_csv(paths[1], summary_rows, echo)
    write_results_json(paths[2], summary_rows, echo)
    return paths


@dataclass(frozen=True)
class TwoStageOptimum:
    """Outcome of a theta/n1 grid search for one two-stage policy point."""

    inner: str
    n: int
    rho: float
    theta: float
    theta_quantile: float
    n1: int
    mean_mrt_seconds: float
    mean_normalized_mrt: float | None
    ci_half_width: float | None
    table: tuple[dict, ...] = field(repr=False)
    best_results: tuple[RunResult, ...] = field(repr=False)


def optimize_two_stage(
    inner: str,
    n: int,
    rho: float,
    source,
    *,
    theta_quantiles=DEFAULT_THETA_QUANTILES,
    n1_candidates=None,
    replications: int = 5,
    jobs: int = 2_000_000,
    base_seed: int = 1,
    warmup_fraction: float = DEFAULT_WARMUP_FRACTION,
) -> TwoStageOptimum:
    """Grid-search theta (as size-law quantiles) and stage-0 size n1.

    Every candidate pair sees the same per-replication workloads (common
    random numbers), so the argmin is a paired comparison. Ties on mean
    response prefer larger theta, then larger n1 (fewer transfers, bigger
    fast stage: the cheaper architecture at equal performance).
    """
    if n < 2:
        raise ValueError("two-stage search needs n >= 2")
    candidates = tuple(n1_candidates or default_n1_candidates(n))
    if not candidates:
        raise ValueError("no feasible n1 candidates")
    for n1 in candidates:
        if not 1 <= n1 <= n - 1:
            raise ValueError(f"n1 candidate {n1} outside 1..{n - 1}")
    dist = source.distribution()
    config = source.config(n, rho)
    baseline = source.baseline()
    cov = source.cov_field

    pairs = [
        (q, dist.quantile(q), n1) for q in theta_quantiles for n1 in candidates
    ]
    table: list[dict] = []
    best = None  # (mrt, -theta, -n1, summary, q, theta, n1)
    for q, theta, n1 in pairs:
        spec = PolicySpec(kind=inner, two_stage=True, n1=n1, theta=theta)

        def run_one(rep: int, rep_seed: int) -> RunResult:
            wl = source.workload(n, rho, jobs, rep_seed)
            log = run(wl, config, spec, rep_seed)
            return summarize_run(
                log, warmup_fraction=warmup_fraction, baseline=baseline, cov=cov,
            )

        summary = replicate_and_summarize(run_one, base_seed, replications)
        row = result_row(
            summary.results[0], ci_half_width=summary.ci_half_width,
            seed_override=base_seed,
        )
        row["mrt_seconds"] = summary.mean_mrt_seconds
        row["normalized_mrt"] = summary.mean_normalized_mrt
        row["theta_quantile"] = q
        table.append(row)
        key = (summary.mean_mrt_seconds, -theta, -n1)
        if best is None or key < best[0]:
            best = (key, summary, q, theta, n1)

    _key, summary, q, theta, n1 = best
    return TwoStageOptimum(
        inner=inner,
        n=n,
        rho=rho,
        theta=theta,
        theta_quantile=q,
        n1=n1,
        mean_mrt_seconds=summary.mean_mrt_seconds,
        mean_normalized_mrt=summary.mean_normalized_mrt,
        ci_half_width=summary.ci_half_width,
        table=tuple(table),
        best_results=summary.results,
    )


def pivot_summary(summary_rows, axis: str) -> tuple[list[str], list[list]]:
    """Pivot summary rows into a figure-ready table.

    axis "rho" or "n" becomes the index column; one column per policy. Cells
    are mean normalized responses when every row has one, else mean response
    in seconds. All non-axis sweep dimensions must be single-valued.
    """
    if axis not in ("rho", "n"):
        raise ValueError("axis must be 'rho' or 'n'")
    if not summary_rows:
        raise ValueError("no summary rows to pivot")
    other = "n" if axis == "rho" else "rho"
    other_vals = {row[other] for row in summary_rows}
    if len(other_vals) > 1:
        raise ValueError(f"{other} is not single-valued: {sorted(other_vals)}")
    cov_vals = {row["cov"] for row in summary_rows}
    if len(cov_vals) > 1:
        raise ValueError(f"cov is not single-valued: {sorted(map(str, cov_vals))}")
    use_norm = all(row["normalized_mrt"] is not None for row in summary_rows)
    value_field = "normalized_mrt" if use_norm else "mrt_seconds"
    policies = sorted({row["policy"] for row in summary_rows})
    index = sorted({row[axis] for row in summary_rows})
    cells: dict[tuple, float] = {}
    for row in summary_rows:
        key = (row[axis], row["policy"])
        if key in cells:
            raise ValueError(f"duplicate summary row for {key}")
        cells[key] = row[value_field]
    header = [axis, *policies]
    out = []
    for x in index:
        line: list = [x]
        for p in policies:
            if (x, p) not in cells:
                raise ValueError(f"missing summary row for {(x, p)}")
            line.append(cells[(x, p)])
        out.append(line)
    return header, out


def write_pivot_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for line in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in line) + "\n")

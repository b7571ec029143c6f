"""Experiment harness: profiling campaigns, controlled runs, comparison sweeps.

Every controlled run is paired with a baseline run (all nodes at maximum
frequency) on the same seed and workload; that baseline supplies the
per-pattern latency vector the threshold zones scale from and the power
figure savings are computed against.  Sweeps therefore reproduce exactly
when re-run with the same flags and seeds.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass

from .controllers import (
    DecisionRecord,
    OndemandLoop,
    PowerTracerLoop,
    PowerTracerNPLoop,
    Schedule,
    SimpleDVSLoop,
    ThresholdZone,
)
from .patterns import PatternTracker, top_patterns
from .perfmodel import (
    PerformanceModel,
    ProfilingDataset,
    dominated_tiers,
    fit_model,
    run_profiling,
)
from .reconstruct import reconstruct, service_time_percentage
from .scenario import ConfigError, Scenario
from .sim import SimResult, power_model_for, run_sim
from .workloads import nominal_load, pattern_seed_centroids

_PROFILE_SEED_OFFSET = 104_729
_PILOT_SEED_OFFSET = 99_991


@dataclass(frozen=True)
class BaselineStats:
    """What a controlled run needs from its paired baseline."""

    mean_power_w: float
    mean_latency_us: float
    miss_ratio: float
    completed: int
    sl: dict[int, float]
    sl_avg: float


@dataclass(slots=True)
class RunRow:
    """One comparison-report cell."""

    controller: str
    workload: str
    clients: int
    factor: float
    patterns: int
    replica: int
    seed: int
    mean_power_w: float
    baseline_power_w: float
    saving_pct: float
    miss_pct: float
    mean_latency_ms: float
    completed: int


def resolve_profile_tiers(scenario: Scenario) -> tuple[int, ...]:
    """Which tiers the profiling campaign sweeps.

    ``dominated`` runs a pilot trace at the largest profiled load and keeps
    the tiers whose mean service-time share clears the threshold; ``all``
    sweeps everything; otherwise the setting is a space-separated tier list.
    """
    setting = scenario.profile_tiers
    if setting == "all":
        return tuple(range(len(scenario.nodes)))
    if setting != "dominated":
        try:
            tiers = tuple(int(x) for x in setting.split())
        except ValueError:
            raise ConfigError(f"bad profile tiers setting {setting!r}") from None
        if not tiers or any(not 0 <= t < len(scenario.nodes) for t in tiers):
            raise ConfigError(f"bad profile tiers setting {setting!r}")
        return tiers
    pilot_clients = max(scenario.profile_clients)
    wl = scenario.workload(
        clients=pilot_clients, up_ramp_s=2.0,
        runtime_s=max(scenario.profile_duration_s - 2.0, 5.0), down_ramp_s=0.0,
    )
    result = run_sim(scenario.nodes, wl, seed=scenario.seed + _PILOT_SEED_OFFSET,
                     network_hop_us=scenario.network_hop_us)
    report = reconstruct(result.activity_log)
    paths = report.complete_paths
    if not paths:
        raise RuntimeError("dominated-tier pilot produced no complete requests")
    shares = [
        sum(service_time_percentage(p, j) for p in paths) / len(paths)
        for j in range(len(scenario.nodes))
    ]
    return dominated_tiers(shares, scenario.dominated_threshold)


def profile_scenario(
    scenario: Scenario, tiers: tuple[int, ...] | None = None
) -> tuple[PerformanceModel, ProfilingDataset]:
    """Run the profiling campaign for a scenario's workload and fit the model."""
    if tiers is None:
        tiers = resolve_profile_tiers(scenario)
    wl_proto = scenario.workload(clients=1)
    freq_lists = [n.freq_levels_ghz for n in scenario.nodes]

    def runner(clients, fvec, duration_s, seed):
        wl = scenario.workload(
            clients=clients, up_ramp_s=2.0,
            runtime_s=max(duration_s - 2.0, 1.0), down_ramp_s=0.0,
        )
        result = run_sim(
            scenario.nodes, wl, seed=seed, duration_s=duration_s,
            initial_levels=list(fvec), network_hop_us=scenario.network_hop_us,
        )
        return result.activity_log

    load_specs = [(nominal_load(c, wl_proto), c) for c in scenario.profile_clients]
    tracker = PatternTracker()
    tracker.seed(pattern_seed_centroids(wl_proto))
    dataset = run_profiling(
        runner,
        load_specs,
        freq_lists,
        tiers,
        scenario.profile_duration_s,
        scenario.seed + _PROFILE_SEED_OFFSET,
        k=scenario.kmeans_k,
        tracker=tracker,
    )
    model = fit_model(dataset)
    model.dominated_tiers = tiers
    return model, dataset


def swept_fit_quality(model: PerformanceModel) -> dict[tuple[float, int, int], float]:
    """R-squared per swept-tier quadratic fit (constant curves excluded)."""
    return {k: v for k, v in model.r2.items() if k[2] in model.swept_tiers}


def run_baseline(scenario: Scenario, clients: int, seed: int) -> tuple[SimResult, BaselineStats]:
    """All-max reference run plus the derived latency/threshold statistics."""
    wl = scenario.workload(clients=clients)
    result = run_sim(
        scenario.nodes, wl, seed=seed,
        duration_s=scenario.duration_s, network_hop_us=scenario.network_hop_us,
    )
    report = reconstruct(result.activity_log)
    paths = report.complete_paths
    sl: dict[int, float] = {}
    sl_avg = 0.0
    if paths:
        tracker = PatternTracker()
        tracker.seed(pattern_seed_centroids(wl))
        window = top_patterns(report.paths, scenario.kmeans_k, len(wl.classes), tracker=tracker)
        sl = {p.pattern_id: p.avg_server_side_latency for p in window.patterns}
        sl_avg = sum(p.server_side_latency for p in paths) / len(paths)
    stats = BaselineStats(
        mean_power_w=result.mean_power_w,
        mean_latency_us=result.mean_latency_us,
        miss_ratio=result.miss_ratio(scenario.deadline_us),
        completed=len(result.completed),
        sl=sl,
        sl_avg=sl_avg,
    )
    return result, stats


def make_loop(
    scenario: Scenario,
    controller: str,
    baseline: BaselineStats,
    model: PerformanceModel | None,
    factor: float | None = None,
    n_patterns: int | None = None,
):
    """Instantiate the requested control loop against baseline-derived zones."""
    if controller == "baseline":
        return None
    factor = scenario.threshold_factor if factor is None else factor
    n_patterns = scenario.n_patterns if n_patterns is None else n_patterns
    if controller == "ondemand":
        return OndemandLoop(scenario.ondemand_tick_us)
    if not baseline.sl:
        raise RuntimeError("baseline run produced no complete paths; cannot derive thresholds")
    scalar_zone = ThresholdZone(
        (factor * baseline.sl_avg,), scenario.up_factor, scenario.lp_factor
    )
    if controller == "simpledvs":
        return SimpleDVSLoop(scalar_zone, scenario.schedule)
    if controller in ("powertracer", "powertracer_np"):
        if model is None:
            raise ConfigError(f"{controller} requires a fitted performance model (pre_model)")
        if controller == "powertracer_np":
            return PowerTracerNPLoop(
                scalar_zone, model, power_model_for(scenario.nodes),
                scenario.schedule, k=scenario.kmeans_k,
            )
        thresholds = tuple(
            factor * baseline.sl.get(i, baseline.sl_avg) for i in range(n_patterns)
        )
        zone = ThresholdZone(thresholds, scenario.up_factor, scenario.lp_factor)
        tracker = PatternTracker()
        tracker.seed(pattern_seed_centroids(scenario.workload(clients=1)))
        return PowerTracerLoop(
            zone, model, power_model_for(scenario.nodes),
            scenario.schedule, k=scenario.kmeans_k, tracker=tracker,
        )
    raise ConfigError(f"unknown controller {controller!r}")


def run_controlled(
    scenario: Scenario,
    controller: str,
    clients: int,
    seed: int,
    model: PerformanceModel | None,
    baseline: BaselineStats | None = None,
    factor: float | None = None,
    n_patterns: int | None = None,
) -> tuple[SimResult, BaselineStats, object]:
    """Run one controller against its paired baseline; returns (run, baseline, loop)."""
    if baseline is None:
        _, baseline = run_baseline(scenario, clients, seed)
    loop = make_loop(scenario, controller, baseline, model, factor, n_patterns)
    wl = scenario.workload(clients=clients)
    result = run_sim(
        scenario.nodes, wl, controller=loop, seed=seed,
        duration_s=scenario.duration_s, network_hop_us=scenario.network_hop_us,
    )
    return result, baseline, loop


def result_row(
    scenario: Scenario,
    controller: str,
    clients: int,
    factor: float,
    patterns: int,
    replica: int,
    seed: int,
    result: SimResult,
    baseline: BaselineStats,
) -> RunRow:
    saving = (1.0 - result.mean_power_w / baseline.mean_power_w) * 100.0
    return RunRow(
        controller=controller,
        workload=scenario.workload_table,
        clients=clients,
        factor=factor,
        patterns=patterns,
        replica=replica,
        seed=seed,
        mean_power_w=result.mean_power_w,
        baseline_power_w=baseline.mean_power_w,
        saving_pct=0.0 if controller == "baseline" else saving,
        miss_pct=result.miss_ratio(scenario.deadline_us) * 100.0,
        mean_latency_ms=result.mean_latency_us / 1000.0,
        completed=len(result.completed),
    )


def cell_seed(scenario: Scenario, clients: int, replica: int) -> int:
    return scenario.seed + 7919 * replica + clients


def _run_cell(args) -> RunRow:
    scenario, controller, clients, factor, patterns, replica, model, baseline = args
    seed = cell_seed(scenario, clients, replica)
    if controller == "baseline":
        result, stats = run_baseline(scenario, clients, seed)
        return result_row(scenario, controller, clients, factor, patterns, replica, seed, result, stats)
    result, stats, _loop = run_controlled(
        scenario, controller, clients, seed, model,
        baseline=baseline, factor=factor, n_patterns=patterns,
    )
    return result_row(scenario, controller, clients, factor, patterns, replica, seed, result, stats)


@dataclass(frozen=True)
class ExperimentPlan:
    controllers: tuple[str, ...]
    clients: tuple[int, ...]
    factors: tuple[float, ...]
    patterns: tuple[int, ...]
    replicas: int = 1

    def __post_init__(self) -> None:
        if not self.controllers or not self.clients:
            raise ConfigError("plan needs at least one controller and one client count")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")


def run_compare(
    scenario: Scenario,
    plan: ExperimentPlan,
    model: PerformanceModel | None,
    jobs: int = 1,
) -> list[RunRow]:
    """Cartesian sweep with paired seeds; rows come back in deterministic order."""
    needs_model = any(c in ("powertracer", "powertracer_np") for c in plan.controllers)
    if needs_model and model is None:
        model, _ = profile_scenario(scenario)

    baselines: dict[tuple[int, int], BaselineStats] = {}
    base_args = [(clients, replica) for replica in range(plan.replicas) for clients in plan.clients]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            for (clients, replica), stats in zip(
                base_args,
                pool.map(
                    _baseline_worker,
                    [(scenario, clients, cell_seed(scenario, clients, replica)) for clients, replica in base_args],
                ),
            ):
                baselines[(clients, replica)] = stats
    else:
        for clients, replica in base_args:
            _, baselines[(clients, replica)] = run_baseline(
                scenario, clients, cell_seed(scenario, clients, replica)
            )

    cells = []
    for replica in range(plan.replicas):
        for controller in plan.controllers:
            for clients in plan.clients:
                for factor in plan.factors:
                    for patterns in plan.patterns:
                        cells.append(
                            (
                                scenario, controller, clients, factor, patterns,
                                replica, model, baselines[(clients, replica)],
                            )
                        )
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(cell) for cell in cells]


def _baseline_worker(args) -> BaselineStats:
    scenario, clients, seed = args
    _, stats = run_baseline(scenario, clients, seed)
    return stats


# ---------------------------------------------------------------------------
# report rendering
# ---------------------------------------------------------------------------

COMPARISON_HEADER = (
    "controller,workload,clients,factor,patterns,replica,seed,"
    "mean_power_w,baseline_power_w,saving_pct,miss_pct,mean_latency_ms,completed"
)


def comparison_csv(rows: list[RunRow]) -> str:
    out = [COMPARISON_HEADER]
    for r in rows:
        out.append(
            f"{r.controller},{r.workload},{r.clients},{r.factor:.3f},{r.patterns},"
            f"{r.replica},{r.seed},{r.mean_power_w:.6f},{r.baseline_power_w:.6f},"
            f"{r.saving_pct:.6f},{r.miss_pct:.6f},{r.mean_latency_ms:.6f},{r.completed}"
        )
    return "\n".join(out) + "\n"


def comparison_table(rows: list[RunRow]) -> str:
    """Aligned text table, averaged over replicas per sweep cell."""
    groups: dict[tuple, list[RunRow]] = {}
    for r in rows:
        groups.setdefault((r.controller, r.clients, r.factor, r.patterns), []).append(r)
    lines = [
        f"{'controller':<16}{'clients':>8}{'factor':>8}{'N':>4}"
        f"{'saving%':>10}{'miss%':>8}{'latency_ms':>12}{'power_w':>10}"
    ]
    for key in sorted(groups, key=lambda k: (k[1], k[0], k[2], k[3])):
        rs = groups[key]
        n = len(rs)
        lines.append(
            f"{key[0]:<16}{key[1]:>8}{key[2]:>8.2f}{key[3]:>4}"
            f"{sum(r.saving_pct for r in rs) / n:>10.3f}"
            f"{sum(r.miss_pct for r in rs) / n:>8.3f}"
            f"{sum(r.mean_latency_ms for r in rs) / n:>12.2f}"
            f"{sum(r.mean_power_w for r in rs) / n:>10.2f}"
        )
    return "\n".join(lines) + "\n"


def summary_csv(row: RunRow, duration_s: float) -> str:
    header = (
        "controller,workload,clients,factor,patterns,seed,duration_s,"
        "mean_power_w,saving_pct,miss_pct,mean_latency_ms,completed"
    )
    return (
        header + "\n"
        f"{row.controller},{row.workload},{row.clients},{row.factor:.3f},{row.patterns},"
        f"{row.seed},{duration_s:.3f},{row.mean_power_w:.6f},{row.saving_pct:.6f},"
        f"{row.miss_pct:.6f},{row.mean_latency_ms:.6f},{row.completed}\n"
    )


def decision_csv(records: list[DecisionRecord], n_patterns: int) -> str:
    header = "t_us,controller,direction,tier,old_level,new_level,reason," + ",".join(
        f"D{i + 1}_us" for i in range(n_patterns)
    )
    lines = [header]
    for rec in records:
        if rec.tier is not None:
            tier, old, new = str(rec.tier), str(rec.old_levels[rec.tier]), str(rec.new_levels[rec.tier])
        else:
            tier = "-"
            old = ";".join(str(x) for x in rec.old_levels)
            new = ";".join(str(x) for x in rec.new_levels)
        lat = ",".join(
            f"{rec.latencies[i]:.3f}" if i in rec.latencies else "" for i in range(n_patterns)
        )
        lines.append(
            f"{rec.t_us},{rec.controller},{rec.direction},{tier},{old},{new},{rec.reason},{lat}"
        )
    return "\n".join(lines) + "\n"


def power_csv(result: SimResult) -> str:
    n = len(result.node_specs)
    header = "t_us," + ",".join(f"node{i}_w" for i in range(n)) + ",total_w"
    lines = [header]
    for t, watts in result.power_trace:
        lines.append(
            f"{t}," + ",".join(f"{w:.6f}" for w in watts) + f",{sum(watts):.6f}"
        )
    return "\n".join(lines) + "\n"

"""Command-line front end: profile, run, compare, trace.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .patterns import PatternTracker, pattern_csv_rows, top_patterns
from .perfmodel import format_model, parse_model
from .reconstruct import reconstruct
from .scenario import CONTROLLER_NAMES, ConfigError, load_scenario
from .tracelog import ParseError, parse_log

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="powertracer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_prof = sub.add_parser("profile", help="run the profiling campaign and write pre_model")
    p_prof.add_argument("--config", help="scenario config file")
    p_prof.add_argument("--out", default="pre_model", help="output model path (default pre_model)")
    p_prof.add_argument("--tiers", help="dominated | all | space-separated tier list")
    p_prof.add_argument("--seed", type=int)
    p_prof.add_argument("--clients", help="comma-separated profiled client counts")
    p_prof.add_argument("--duration", type=float, help="seconds simulated per profiling run")
    p_prof.add_argument("--lenient", action="store_true",
                        help="warn instead of failing when a fit misses the R^2 gate")

    p_run = sub.add_parser("run", help="one controlled run with summary/decision/power output")
    p_run.add_argument("--config", help="scenario config file")
    p_run.add_argument("--controller", help="|".join(CONTROLLER_NAMES))
    p_run.add_argument("--clients", type=int)
    p_run.add_argument("--factor", type=float, help="threshold factor over baseline latencies")
    p_run.add_argument("--patterns", type=int, help="number of main patterns N")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--pre-model", dest="pre_model", help="fitted model file")
    p_run.add_argument("--out", default="out", help="output directory")

    p_cmp = sub.add_parser("compare", help="controller comparison sweep")
    p_cmp.add_argument("--config", help="scenario config file")
    p_cmp.add_argument("--controllers", default="baseline,powertracer,powertracer_np,simpledvs,ondemand")
    p_cmp.add_argument("--clients", help="comma-separated client counts")
    p_cmp.add_argument("--factors", help="comma-separated threshold factors")
    p_cmp.add_argument("--patterns", help="comma-separated main-pattern counts")
    p_cmp.add_argument("--replicas", type=int, default=1)
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.add_argument("--seed", type=int)
    p_cmp.add_argument("--pre-model", dest="pre_model")
    p_cmp.add_argument("--out", default="out", help="output directory")

    p_tr = sub.add_parser("trace", help="offline path reconstruction and pattern export")
    p_tr.add_argument("log", help="activity log file")
    p_tr.add_argument("--k", type=int, default=10, help="k-means cluster count")
    p_tr.add_argument("--patterns", type=int, default=10, help="patterns to report")
    p_tr.add_argument("--out", help="output CSV path (default stdout)")
    return parser


def _scenario_from(args, **extra):
    overrides = dict(extra)
    for field, attr in (
        ("seed", "seed"),
        ("controller", "controller"),
        ("threshold_factor", "factor"),
        ("n_patterns", "patterns"),
    ):
        if hasattr(args, attr) and getattr(args, attr) is not None:
            overrides[field] = getattr(args, attr)
    return load_scenario(getattr(args, "config", None), **overrides)


def _cmd_profile(args) -> int:
    overrides = {}
    if args.clients:
        overrides["profile_clients"] = tuple(int(x) for x in args.clients.split(","))
    if args.duration is not None:
        overrides["profile_duration_s"] = args.duration
    if args.tiers is not None:
        overrides["profile_tiers"] = args.tiers
    scenario = _scenario_from(args, **overrides)
    model, dataset = harness.profile_scenario(scenario)
    Path(args.out).write_text(format_model(model), encoding="utf-8")
    quality = harness.swept_fit_quality(model)
    worst = min(quality.values()) if quality else 1.0
    print(
        f"profiled {dataset.run_count} runs -> {args.out}: "
        f"{len(model.coeffs)} curves, {len(quality)} swept fits, min R^2 {worst:.5f}"
    )
    failing = {k: v for k, v in quality.items() if v < scenario.r2_gate}
    for (load, pattern, tier), r2 in sorted(failing.items()):
        print(f"  R^2 {r2:.5f} < {scenario.r2_gate} at load={load:.3f} pattern={pattern} tier={tier}")
    if failing and not args.lenient:
        return EXIT_RUNTIME
    return EXIT_OK


def _load_model(args):
    if args.pre_model is None:
        return None
    text = Path(args.pre_model).read_text(encoding="utf-8")
    return parse_model(text)


def _cmd_run(args) -> int:
    scenario = _scenario_from(args)
    clients = args.clients if args.clients is not None else scenario.clients
    controller = scenario.controller
    model = _load_model(args)
    if controller in ("powertracer", "powertracer_np") and model is None:
        print(
            f"error: {controller} needs --pre-model (run `powertracer profile` first)",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    seed = scenario.seed
    if controller == "baseline":
        result, stats = harness.run_baseline(scenario, clients, seed)
        loop = None
    else:
        result, stats, loop = harness.run_controlled(scenario, controller, clients, seed, model)
    row = harness.result_row(
        scenario, controller, clients, scenario.threshold_factor,
        scenario.n_patterns, 0, seed, result, stats,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    duration_s = result.duration_us / 1e6
    (out / "summary.csv").write_text(harness.summary_csv(row, duration_s), encoding="utf-8")
    records = loop.records if loop is not None else []
    (out / "decisions.csv").write_text(
        harness.decision_csv(records, scenario.n_patterns), encoding="utf-8"
    )
    (out / "power.csv").write_text(harness.power_csv(result), encoding="utf-8")
    print(
        f"{controller} clients={clients} seed={seed}: power {row.mean_power_w:.2f} W, "
        f"saving {row.saving_pct:.3f}%, miss {row.miss_pct:.3f}%, "
        f"latency {row.mean_latency_ms:.2f} ms -> {out}/"
    )
    return EXIT_OK


def _cmd_compare(args) -> int:
    scenario = _scenario_from(args)
    controllers = tuple(x.strip() for x in args.controllers.split(",") if x.strip())
    unknown = [c for c in controllers if c not in CONTROLLER_NAMES]
    if unknown:
        raise _UsageError(f"unknown controllers {unknown}; valid: {list(CONTROLLER_NAMES)}")
    from .workloads import COMPARE_CLIENTS

    clients = (
        tuple(int(x) for x in args.clients.split(","))
        if args.clients
        else COMPARE_CLIENTS[scenario.workload_table]
    )
    factors = (
        tuple(float(x) for x in args.factors.split(","))
        if args.factors
        else (scenario.threshold_factor,)
    )
    patterns = (
        tuple(int(x) for x in args.patterns.split(","))
        if args.patterns
        else (scenario.n_patterns,)
    )
    plan = harness.ExperimentPlan(controllers, clients, factors, patterns, args.replicas)
    model = _load_model(args)
    rows = harness.run_compare(scenario, plan, model, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text(harness.comparison_csv(rows), encoding="utf-8")
    table = harness.comparison_table(rows)
    (out / "comparison.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def _cmd_trace(args) -> int:
    data = Path(args.log).read_bytes()
    log = parse_log(data)
    report = reconstruct(log)
    columns = (
        ["window_start_us", "pattern_id", "first_msg_size", "avg_latency_us"]
        + [f"svc_t{j}_us" for j in range(log.tier_count)]
        + ["load_rps", "fraction"]
    )
    header_only = ",".join(columns) + "\n"
    if not report.complete_paths:
        if report.paths:
            print("warning: no complete requests in log; emitting header only", file=sys.stderr)
        text = header_only
    else:
        ts = [a.timestamp for a in log.activities]
        start, end = min(ts), max(ts) + 1
        tracker = PatternTracker()
        window = top_patterns(
            report.paths, args.k, args.patterns,
            window_start=start, window_end=end, tracker=tracker,
        )
        text = "\n".join(pattern_csv_rows([window], log.tier_count)) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "profile":
            return _cmd_profile(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        if args.command == "trace":
            return _cmd_trace(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"trace parse error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

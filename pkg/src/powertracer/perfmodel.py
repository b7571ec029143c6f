"""Empirical performance model: per-tier service-time curves plus network constants.

Profiling sweeps one tier's frequency grid at a time (others pinned at max)
across a set of load levels, collecting per-pattern mean tier service times
and per-path gap times from reconstructed traces.  Fitting produces, per
(load level, pattern, tier), quadratic coefficients ``a*F^2 + b*F + c`` with
F in GHz and service time in microseconds, plus a per-(load, pattern) network
constant.  Predicted per-pattern latency is the sum of the per-tier curves
and the network constant; the fast-modulation optimizer exhaustively searches
the (small) frequency lattice for the cheapest vector meeting the latency
thresholds.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .patterns import PatternTracker, top_patterns
from .reconstruct import reconstruct
from .tracelog import ActivityLog

log = logging.getLogger(__name__)

# A frequency setting is a tuple of per-tier indices into each tier's level list.
FrequencyVector = tuple[int, ...]

# Maps (load level, per-tier GHz values) to predicted total cluster watts.
PowerModelFn = Callable[[float, Sequence[float]], float]


@dataclass(slots=True)
class ProfilingSample:
    load: float
    pattern: int
    tier: int
    freq_ghz: float
    mean_service_us: float
    count: int


@dataclass(slots=True)
class GammaSample:
    load: float
    pattern: int
    mean_gap_us: float
    count: int


@dataclass(slots=True)
class ProfilingDataset:
    samples: list[ProfilingSample] = field(default_factory=list)
    gamma_samples: list[GammaSample] = field(default_factory=list)
    run_count: int = 0


@dataclass(slots=True)
class PerformanceModel:
    """Fitted coefficients, gammas and fit quality, keyed by load level."""

    coeffs: dict[tuple[float, int, int], tuple[float, float, float]]
    gamma: dict[tuple[float, int], float]
    r2: dict[tuple[float, int, int], float]
    load_levels: list[float]
    pattern_count: int
    tier_count: int
    dominated_tiers: tuple[int, ...] = ()
    swept_tiers: tuple[int, ...] = ()


def dominated_tiers(percentages: Sequence[float], threshold: float) -> tuple[int, ...]:
    """Tiers whose mean service-time share reaches the threshold.

    Ordered by descending share; never empty (falls back to the single
    largest tier).
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    ranked = sorted(range(len(percentages)), key=lambda j: (-percentages[j], j))
    chosen = tuple(j for j in ranked if percentages[j] >= threshold)
    if not chosen:
        chosen = (ranked[0],)
    return chosen


# Runs one simulation and returns its activity log.
ProfilingRunner = Callable[[int, FrequencyVector, float, int], ActivityLog]


def run_profiling(
    runner: ProfilingRunner,
    load_specs: Sequence[tuple[float, int]],
    freq_lists: Sequence[Sequence[float]],
    tiers_to_sweep: Sequence[int],
    duration_s: float,
    seed: int,
    k: int = 10,
    max_patterns: int = 10,
    tracker: PatternTracker | None = None,
) -> ProfilingDataset:
    """Collect per-pattern tier service and gap times over the profiling grid.

    ``load_specs`` pairs each load-level value (requests/second) with the
    client count that produces it.  For every load level and every swept
    tier, the runner executes once per frequency in that tier's grid with all
    other tiers pinned at max, so the experiment count is
    ``len(load_specs) * grid size * len(tiers_to_sweep)``.
    """
    if not tiers_to_sweep:
        raise ValueError("tiers_to_sweep must not be empty")
    dataset = ProfilingDataset()
    if tracker is None:
        tracker = PatternTracker()
    max_levels = tuple(len(f) - 1 for f in freq_lists)
    run_index = 0
    for level_value, clients in load_specs:
        for tier in tiers_to_sweep:
            for fi in range(len(freq_lists[tier])):
                fvec = tuple(
                    fi if j == tier else max_levels[j] for j in range(len(freq_lists))
                )
                run_seed = seed + run_index
                run_index += 1
                try:
                    activity_log = runner(clients, fvec, duration_s, run_seed)
                except Exception as exc:
                    raise RuntimeError(
                        f"profiling run failed at load={level_value} tier={tier} "
                        f"freq={freq_lists[tier][fi]}: {exc}"
                    ) from exc
                dataset.run_count += 1
                _collect_run(
                    dataset,
                    activity_log,
                    level_value,
                    tuple(freq_lists[j][fvec[j]] for j in range(len(freq_lists))),
                    tracker,
                    k,
                    max_patterns,
                )
    return dataset


def _collect_run(
    dataset: ProfilingDataset,
    activity_log: ActivityLog,
    load_level: float,
    freqs_ghz: tuple[float, ...],
    tracker: PatternTracker,
    k: int,
    max_patterns: int,
) -> None:
    report = reconstruct(activity_log)
    if not report.complete_paths:
        return
    window = top_patterns(report.paths, k, max_patterns, tracker=tracker)
    tier_count = activity_log.tier_count
    for p in window.patterns:
        for j in range(tier_count):
            dataset.samples.append(
                ProfilingSample(
                    load_level, p.pattern_id, j, freqs_ghz[j],
                    p.avg_tier_service_time[j], p.path_count,
                )
            )
        mean_gap = p.avg_server_side_latency - sum(p.avg_tier_service_time)
        dataset.gamma_samples.append(
            GammaSample(load_level, p.pattern_id, mean_gap, p.path_count)
        )


def _r_squared(y: np.ndarray, predicted: np.ndarray) -> float:
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0
    ss_res = float(((y - predicted) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def fit_model(dataset: ProfilingDataset, collapse_gamma: bool = False) -> PerformanceModel:
    """Least-squares quadratic fit per (load, pattern, tier).

    Combinations observed at a single frequency become constant curves (their
    count-weighted mean); quadratics need at least three distinct frequency
    points.  ``collapse_gamma`` replaces per-load network constants with each
    pattern's global mean.
    """
    grouped: dict[tuple[float, int, int], list[ProfilingSample]] = {}
    for s in dataset.samples:
        grouped.setdefault((s.load, s.pattern, s.tier), []).append(s)

    coeffs: dict[tuple[float, int, int], tuple[float, float, float]] = {}
    r2: dict[tuple[float, int, int], float] = {}
    swept: set[int] = set()
    for key, samples in sorted(grouped.items()):
        freqs = np.array([s.freq_ghz for s in samples])
        y = np.array([s.mean_service_us for s in samples])
        counts = np.array([s.count for s in samples], dtype=float)
        distinct = len(set(freqs.tolist()))
        if distinct >= 3:
            a, b, c = np.polyfit(freqs, y, 2)
            coeffs[key] = (float(a), float(b), float(c))
            r2[key] = _r_squared(y, np.polyval((a, b, c), freqs))
            swept.add(key[2])
        elif distinct == 1:
            mean = float((y * counts).sum() / counts.sum())
            coeffs[key] = (0.0, 0.0, mean)
            r2[key] = _r_squared(y, np.full_like(y, mean))
        else:
            raise ValueError(
                f"rank-deficient fit at load={key[0]} pattern={key[1]} tier={key[2]}: "
                f"{distinct} distinct frequencies (need 1 or >= 3)"
            )

    gamma_grouped: dict[tuple[float, int], list[GammaSample]] = {}
    for g in dataset.gamma_samples:
        gamma_grouped.setdefault((g.load, g.pattern), []).append(g)
    gamma = {
        key: float(sum(g.mean_gap_us * g.count for g in gs) / sum(g.count for g in gs))
        for key, gs in sorted(gamma_grouped.items())
    }
    if collapse_gamma:
        by_pattern: dict[int, list[float]] = {}
        for (_, pattern), value in gamma.items():
            by_pattern.setdefault(pattern, []).append(value)
        global_gamma = {p: sum(vs) / len(vs) for p, vs in by_pattern.items()}
        gamma = {key: global_gamma[key[1]] for key in gamma}

    load_levels = sorted({key[0] for key in coeffs})
    patterns = {key[1] for key in coeffs}
    tiers = {key[2] for key in coeffs}
    return PerformanceModel(
        coeffs=coeffs,
        gamma=gamma,
        r2=r2,
        load_levels=load_levels,
        pattern_count=max(patterns) + 1 if patterns else 0,
        tier_count=max(tiers) + 1 if tiers else 0,
        swept_tiers=tuple(sorted(swept)),
    )


def tier_service_curve(
    model: PerformanceModel, load: float, pattern: int, tier: int, freq_ghz: float
) -> float:
    """Evaluate one fitted curve, clamping negative dips to zero."""
    abc = model.coeffs.get((load, pattern, tier))
    if abc is None:
        return 0.0
    a, b, c = abc
    value = a * freq_ghz * freq_ghz + b * freq_ghz + c
    if value < 0.0:
        log.warning(
            "fitted curve dipped negative at load=%s pattern=%d tier=%d F=%.3f; clamping",
            load,
            pattern,
            tier,
            freq_ghz,
        )
        return 0.0
    return value


def predict_latency(
    model: PerformanceModel, load: float, freqs_ghz: Sequence[float]
) -> list[float]:
    """Predicted per-pattern server-side latency at the given per-tier GHz."""
    if load not in model.load_levels:
        raise ValueError(f"unknown load level {load}; profiled levels: {model.load_levels}")
    out = []
    for i in range(model.pattern_count):
        total = sum(
            tier_service_curve(model, load, i, j, freqs_ghz[j])
            for j in range(model.tier_count)
        )
        out.append(total + model.gamma.get((load, i), 0.0))
    return out


def fast_modulation(
    model: PerformanceModel,
    load: float,
    thresholds: Sequence[float],
    power_model: PowerModelFn,
    freq_lists: Sequence[Sequence[float]],
) -> FrequencyVector:
    """Pick the cheapest frequency vector whose predicted latencies meet thresholds.

    Exhaustively enumerates the per-tier level lattice.  Vectors are feasible
    when every constrained pattern's predicted latency stays at or below its
    threshold; among feasible vectors the one with minimal predicted power
    wins (ties broken by the lexicographically smallest level tuple).  With
    no feasible vector the all-max setting is returned.
    """
    if any(t <= 0 for t in thresholds):
        raise ValueError("thresholds must be strictly positive")
    n_constrained = min(len(thresholds), model.pattern_count)
    best: tuple[float, FrequencyVector] | None = None
    for levels in itertools.product(*(range(len(f)) for f in freq_lists)):
        freqs_ghz = tuple(freq_lists[j][levels[j]] for j in range(len(freq_lists)))
        predicted = predict_latency(model, load, freqs_ghz)
        if any(predicted[i] > thresholds[i] for i in range(n_constrained)):
            continue
        candidate = (power_model(load, freqs_ghz), levels)
        if best is None or candidate < best:
            best = candidate
    if best is None:
        return tuple(len(f) - 1 for f in freq_lists)
    return best[1]


def format_model(model: PerformanceModel) -> str:
    """Render the model in the line-oriented persistence format.

    Header ``PREMODEL v1 M=<tiers> N=<patterns>``, a ``LOADS`` line, one
    ``COEF <L> <i> <j> <a> <b> <c> <r2>`` line per curve and one
    ``GAMMA <L> <i> <gamma_us>`` line per network constant.  Numbers carry 9
    significant digits, so format/parse round-trips are exact.
    """
    def num(x: float) -> str:
        return f"{x:.9g}"

    lines = [f"PREMODEL v1 M={model.tier_count} N={model.pattern_count}"]
    lines.append("LOADS " + " ".join(num(level) for level in model.load_levels))
    for (load, i, j), (a, b, c) in sorted(model.coeffs.items()):
        r2 = model.r2.get((load, i, j), 1.0)
        lines.append(f"COEF {num(load)} {i} {j} {num(a)} {num(b)} {num(c)} {num(r2)}")
    for (load, i), g in sorted(model.gamma.items()):
        lines.append(f"GAMMA {num(load)} {i} {num(g)}")
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> PerformanceModel:
    """Parse the persistence format back into a :class:`PerformanceModel`."""
    lines = [line for line in text.split("\n") if line]
    if not lines or not lines[0].startswith("PREMODEL v1 "):
        raise ValueError("not a PREMODEL v1 file")
    header = dict(part.split("=") for part in lines[0].split()[2:])
    tier_count = int(header["M"])
    pattern_count = int(header["N"])
    coeffs: dict[tuple[float, int, int], tuple[float, float, float]] = {}
    r2: dict[tuple[float, int, int], float] = {}
    gamma: dict[tuple[float, int], float] = {}
    load_levels: list[float] = []
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "LOADS":
            load_levels = [float(x) for x in parts[1:]]
        elif parts[0] == "COEF":
            load, i, j = float(parts[1]), int(parts[2]), int(parts[3])
            coeffs[(load, i, j)] = (float(parts[4]), float(parts[5]), float(parts[6]))
            r2[(load, i, j)] = float(parts[7])
        elif parts[0] == "GAMMA":
            gamma[(float(parts[1]), int(parts[2]))] = float(parts[3])
        else:
            raise ValueError(f"unknown record {parts[0]!r} in model file")
    return PerformanceModel(
        coeffs=coeffs,
        gamma=gamma,
        r2=r2,
        load_levels=sorted(load_levels),
        pattern_count=pattern_count,
        tier_count=tier_count,
    )

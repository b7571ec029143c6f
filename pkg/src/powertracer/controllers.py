"""DVFS controllers: the tracing-guided step law plus comparison policies.

The step law watches per-pattern server-side latencies against threshold
zones [LP*TH_i, UP*TH_i].  When any pattern exceeds its upper bound, the tier
with the largest service time in the worst-violating pattern steps up one
level; when every pattern sits below its lower bound, the tier with the
smallest fraction-weighted service time steps down one level; otherwise the
frequency vector holds.  At most one tier moves per control period, by
exactly one level.

The NP variant applies the same law to the all-paths average instead of
per-pattern statistics.  SimpleDVS picks the stepped tier by CPU utilization,
and the ondemand policy rescales every node independently from its own
utilization with no coordination at all.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .patterns import PatternTracker, PatternWindow, estimate_load, quantize_load, top_patterns
from .perfmodel import (
    FrequencyVector,
    PerformanceModel,
    PowerModelFn,
    fast_modulation,
    predict_latency,
)
from .reconstruct import reconstruct

log = logging.getLogger(__name__)

UP_FACTOR_DEFAULT = 1.2
LP_FACTOR_DEFAULT = 0.8
ONDEMAND_UP_THRESHOLD = 0.80


@dataclass(frozen=True)
class ThresholdZone:
    """Per-pattern latency thresholds plus the upper/lower zone factors."""

    th: tuple[float, ...]
    up: float = UP_FACTOR_DEFAULT
    lp: float = LP_FACTOR_DEFAULT

    def __post_init__(self) -> None:
        if not (0 < self.lp < 1 < self.up):
            raise ValueError(f"need 0 < lp < 1 < up, got lp={self.lp} up={self.up}")
        if any(t <= 0 for t in self.th):
            raise ValueError("thresholds must be positive")


@dataclass(slots=True)
class ControllerObservation:
    """One sampling window's view: pattern stats, utilization, current levels."""

    window: PatternWindow | None
    per_node_utilization: list[float]
    current_freq: FrequencyVector
    period_index: int
    level_counts: tuple[int, ...]
    all_avg_latency: float | None = None
    all_avg_tier_service: list[float] | None = None


@dataclass(slots=True)
class ControlDecision:
    new_freq: FrequencyVector
    changed_tier: int | None
    direction: str  # "up" | "down" | "hold"
    reason: str


def _hold(obs: ControllerObservation, reason: str) -> ControlDecision:
    return ControlDecision(tuple(obs.current_freq), None, "hold", reason)


def _step(obs: ControllerObservation, tier: int, delta: int, reason: str) -> ControlDecision:
    new = list(obs.current_freq)
    new[tier] += delta
    return ControlDecision(tuple(new), tier, "up" if delta > 0 else "down", reason)


def powertracer_step(obs: ControllerObservation, zone: ThresholdZone) -> ControlDecision:
    """One feedback step from per-pattern latencies (see module docstring).

    Ties break toward the worst relative excess, then the lowest pattern id,
    then the lowest tier index; a tier already at its boundary falls through
    to the next-ranked one.
    """
    patterns = []
    if obs.window is not None:
        patterns = [p for p in obs.window.patterns if p.pattern_id < len(zone.th)]
    if not patterns:
        return _hold(obs, "no-data")
    cur = obs.current_freq
    tiers = range(len(cur))

    violating = [
        (p.avg_server_side_latency / zone.th[p.pattern_id], p)
        for p in patterns
        if p.avg_server_side_latency > zone.up * zone.th[p.pattern_id]
    ]
    if violating:
        violating.sort(key=lambda item: (-item[0], item[1].pattern_id))
        worst = violating[0][1]
        for j in sorted(tiers, key=lambda j: (-worst.avg_tier_service_time[j], j)):
            if cur[j] < obs.level_counts[j] - 1:
                return _step(obs, j, +1, "latency-high")
        return _hold(obs, "all-max")

    if all(p.avg_server_side_latency < zone.lp * zone.th[p.pattern_id] for p in patterns):
        weighted = [
            sum(p.fraction * p.avg_tier_service_time[j] for p in patterns) for j in tiers
        ]
        for j in sorted(tiers, key=lambda j: (weighted[j], j)):
            if cur[j] > 0:
                return _step(obs, j, -1, "latency-low")
        return _hold(obs, "all-min")

    return _hold(obs, "in-zone")


def powertracer_np_step(obs: ControllerObservation, zone: ThresholdZone) -> ControlDecision:
    """The step law applied to the single all-paths average pattern."""
    if obs.all_avg_latency is None or obs.all_avg_tier_service is None:
        return _hold(obs, "no-data")
    threshold = zone.th[0]
    cur = obs.current_freq
    service = obs.all_avg_tier_service
    tiers = range(len(cur))
    if obs.all_avg_latency > zone.up * threshold:
        for j in sorted(tiers, key=lambda j: (-service[j], j)):
            if cur[j] < obs.level_counts[j] - 1:
                return _step(obs, j, +1, "latency-high")
        return _hold(obs, "all-max")
    if obs.all_avg_latency < zone.lp * threshold:
        for j in sorted(tiers, key=lambda j: (service[j], j)):
            if cur[j] > 0:
                return _step(obs, j, -1, "latency-low")
        return _hold(obs, "all-min")
    return _hold(obs, "in-zone")


def simpledvs_step(obs: ControllerObservation, zone: ThresholdZone) -> ControlDecision:
    """Utilization-indicator policy: latency decides direction, utilization the tier."""
    if obs.all_avg_latency is None:
        return _hold(obs, "no-data")
    threshold = zone.th[0]
    cur = obs.current_freq
    util = obs.per_node_utilization
    tiers = range(len(cur))
    if obs.all_avg_latency > zone.up * threshold:
        for j in sorted(tiers, key=lambda j: (-util[j], j)):
            if cur[j] < obs.level_counts[j] - 1:
                return _step(obs, j, +1, "latency-high")
        return _hold(obs, "all-max")
    if obs.all_avg_latency < zone.lp * threshold:
        for j in sorted(tiers, key=lambda j: (util[j], j)):
            if cur[j] > 0:
                return _step(obs, j, -1, "latency-low")
        return _hold(obs, "all-min")
    return _hold(obs, "in-zone")


def ondemand_step(
    utilization: float,
    current_level: int,
    freq_levels: Sequence[float],
    up_threshold: float = ONDEMAND_UP_THRESHOLD,
) -> int:
    """Kernel-governor rule for one node: jump to max above the threshold,
    otherwise the lowest level keeping projected utilization under it."""
    if utilization > up_threshold:
        return len(freq_levels) - 1
    f_cur = freq_levels[current_level]
    for level, f in enumerate(freq_levels):
        if utilization * f_cur / f <= up_threshold:
            return level
    return len(freq_levels) - 1


# ---------------------------------------------------------------------------
# control loops (invoked by the simulator on their sampling schedule)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    sampling_period_us: int = 1_000_000
    sampling_interval_us: int = 5_000_000
    control_period_us: int = 1_000_000

    def __post_init__(self) -> None:
        if min(self.sampling_period_us, self.sampling_interval_us, self.control_period_us) <= 0:
            raise ValueError("schedule periods must be positive")


@dataclass(slots=True)
class DecisionRecord:
    t_us: int
    controller: str
    direction: str
    tier: int | None
    old_levels: tuple[int, ...]
    new_levels: tuple[int, ...]
    reason: str
    latencies: dict[int, float] = field(default_factory=dict)


class _LoopBase:
    """Shared bookkeeping: decision series, actuation, failure handling."""

    name = "controller"

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.decisions: list[ControlDecision] = []
        self.records: list[DecisionRecord] = []
        self.fast_modulation_count = 0

    @property
    def schedule_us(self) -> tuple[int, int]:
        return (self.schedule.sampling_interval_us, self.schedule.sampling_period_us)

    def _actuate(self, view, new_levels: Sequence[int]) -> None:
        for tier, level in enumerate(new_levels):
            if level != view.current_levels[tier]:
                try:
                    view.set_frequency(tier, level)
                except ValueError as exc:
                    log.warning("actuation failed on tier %d: %s; retrying next period", tier, exc)

    def _record(
        self,
        t_us: int,
        old: tuple[int, ...],
        decision: ControlDecision,
        latencies: dict[int, float] | None = None,
    ) -> None:
        self.decisions.append(decision)
        self.records.append(
            DecisionRecord(
                t_us=t_us,
                controller=self.name,
                direction=decision.direction,
                tier=decision.changed_tier,
                old_levels=old,
                new_levels=tuple(decision.new_freq),
                reason=decision.reason,
                latencies=latencies or {},
            )
        )


class PowerTracerLoop(_LoopBase):
    """Hybrid controller: model-based fast modulation plus per-pattern stepping.

    Fast modulation fires on the first window carrying data and again when the
    quantized load level changes.  The load estimate spans the last two
    sampling intervals and a level change must persist for two consecutive
    windows before re-modulating, so window-level sampling noise near a level
    midpoint cannot retrigger it.  Every other window runs one feedback step.
    """

    name = "powertracer"

    def __init__(
        self,
        zone: ThresholdZone,
        model: PerformanceModel,
        power_model: PowerModelFn,
        schedule: Schedule = Schedule(),
        k: int = 10,
        tracker: PatternTracker | None = None,
    ):
        super().__init__(schedule)
        self.zone = zone
        self.model = model
        self.power_model = power_model
        self.k = k
        self.tracker = tracker if tracker is not None else PatternTracker()
        self._level: float | None = None
        self._pending_level: float | None = None
        self._period = 0

    def _fast_vector(self, view, load_level: float) -> FrequencyVector:
        return fast_modulation(
            self.model, load_level, self.zone.th, self.power_model, view.freq_lists
        )

    def _quantized_level(self, view, end_us: int) -> float:
        span = 2 * self.schedule.sampling_interval_us
        start = max(0, end_us - span)
        rate = estimate_load(view.window_log(start, end_us), end_us - start)
        return quantize_load(rate, self.model.load_levels)

    def _run_fast(self, view, end_us: int, old: tuple[int, ...]) -> None:
        new = self._fast_vector(view, self._level)
        self.fast_modulation_count += 1
        self._actuate(view, new)
        self._record(end_us, old, ControlDecision(new, None, "hold", "fast-modulation"))

    def on_window(self, view, start_us: int, end_us: int) -> None:
        period = self._period
        self._period += 1
        window_log = view.window_log(start_us, end_us)
        report = reconstruct(window_log)
        old = view.current_levels
        obs = ControllerObservation(
            window=None,
            per_node_utilization=[
                view.utilization(j, start_us, end_us) for j in range(len(old))
            ],
            current_freq=old,
            period_index=period,
            level_counts=tuple(len(f) for f in view.freq_lists),
        )
        if not report.complete_paths:
            self._record(end_us, old, _hold(obs, "no-data"))
            return
        level = self._quantized_level(view, end_us)
        if self._level is None:
            self._level = level
            self._run_fast(view, end_us, old)
            return
        if level != self._level:
            if level == self._pending_level:
                self._level = level
                self._pending_level = None
                self._run_fast(view, end_us, old)
                return
            self._pending_level = level
        else:
            self._pending_level = None
        decision, latencies = self._step_decision(view, report, obs, start_us, end_us)
        self._actuate(view, decision.new_freq)
        self._record(end_us, old, decision, latencies)

    def _step_decision(self, view, report, obs, start_us, end_us):
        window = top_patterns(
            report.paths,
            self.k,
            len(self.zone.th),
            window_start=start_us,
            window_end=end_us,
            tracker=self.tracker,
        )
        obs.window = window
        decision = powertracer_step(obs, self.zone)
        return decision, {p.pattern_id: p.avg_server_side_latency for p in window.patterns}


def _fast_modulation_mean(
    model: PerformanceModel,
    load: float,
    threshold: float,
    power_model: PowerModelFn,
    freq_lists: Sequence[Sequence[float]],
) -> FrequencyVector:
    """Fast modulation with the average predicted latency as the constraint."""
    best: tuple[float, FrequencyVector] | None = None
    for levels in itertools.product(*(range(len(f)) for f in freq_lists)):
        freqs = tuple(freq_lists[j][levels[j]] for j in range(len(freq_lists)))
        predicted = predict_latency(model, load, freqs)
        if predicted and sum(predicted) / len(predicted) > threshold:
            continue
        candidate = (power_model(load, freqs), levels)
        if best is None or candidate < best:
            best = candidate
    if best is None:
        return tuple(len(f) - 1 for f in freq_lists)
    return best[1]


class PowerTracerNPLoop(PowerTracerLoop):
    """PowerTracer with the all-paths average latency as the measured output."""

    name = "powertracer_np"

    def _fast_vector(self, view, load_level: float) -> FrequencyVector:
        return _fast_modulation_mean(
            self.model, load_level, self.zone.th[0], self.power_model, view.freq_lists
        )

    def _step_decision(self, view, report, obs, start_us, end_us):
        complete = report.complete_paths
        n = len(complete)
        obs.all_avg_latency = sum(p.server_side_latency for p in complete) / n
        tiers = len(obs.current_freq)
        obs.all_avg_tier_service = [
            sum(p.tier_service_time[j] for p in complete) / n for j in range(tiers)
        ]
        decision = powertracer_np_step(obs, self.zone)
        return decision, {0: obs.all_avg_latency}


class SimpleDVSLoop(_LoopBase):
    """Comparison policy after the utilization-indicator approach."""

    name = "simpledvs"

    def __init__(self, zone: ThresholdZone, schedule: Schedule = Schedule()):
        super().__init__(schedule)
        self.zone = zone
        self._period = 0

    def on_window(self, view, start_us: int, end_us: int) -> None:
        period = self._period
        self._period += 1
        report = reconstruct(view.window_log(start_us, end_us))
        old = view.current_levels
        obs = ControllerObservation(
            window=None,
            per_node_utilization=[
                view.utilization(j, start_us, end_us) for j in range(len(old))
            ],
            current_freq=old,
            period_index=period,
            level_counts=tuple(len(f) for f in view.freq_lists),
        )
        complete = report.complete_paths
        if complete:
            obs.all_avg_latency = sum(p.server_side_latency for p in complete) / len(complete)
        decision = simpledvs_step(obs, self.zone)
        self._actuate(view, decision.new_freq)
        lat = {0: obs.all_avg_latency} if obs.all_avg_latency is not None else {}
        self._record(end_us, old, decision, lat)


class OndemandLoop(_LoopBase):
    """Per-node uncoordinated governor on a fast tick.

    Each node is rescaled from its own busiest-slot utilization over the last
    tick; only ticks that change some level are recorded.
    """

    name = "ondemand"

    def __init__(
        self,
        tick_us: int = 80_000,
        up_threshold: float = ONDEMAND_UP_THRESHOLD,
    ):
        super().__init__(Schedule(tick_us, tick_us, tick_us))
        self.up_threshold = up_threshold

    def on_window(self, view, start_us: int, end_us: int) -> None:
        old = view.current_levels
        new = []
        for tier, levels in enumerate(view.freq_lists):
            slot_util = view.slot_utilization(tier, start_us, end_us)
            u = max(slot_util) if slot_util else 0.0
            new.append(ondemand_step(u, old[tier], levels, self.up_threshold))
        if tuple(new) == old:
            return
        self._actuate(view, new)
        direction = "up" if any(n > o for n, o in zip(new, old)) else "down"
        decision = ControlDecision(tuple(new), None, direction, "ondemand")
        self._record(end_us, old, decision)

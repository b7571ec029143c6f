import random

import pytest

from powertracer.controllers import (
    ControllerObservation,
    OndemandLoop,
    PowerTracerLoop,
    Schedule,
    SimpleDVSLoop,
    ThresholdZone,
    ondemand_step,
    powertracer_np_step,
    powertracer_step,
    simpledvs_step,
)
from powertracer.patterns import PatternStats, PatternTracker, PatternWindow
from powertracer.perfmodel import fit_model, run_profiling
from powertracer.sim import power_model_for, run_sim
from powertracer.workloads import (
    DEFAULT_NODES,
    nominal_load,
    pattern_seed_centroids,
    read_only_workload,
)

MS = 1000.0


def _pattern(pid, latency_ms, services_ms, fraction=0.5):
    return PatternStats(
        pattern_id=pid,
        first_message_size_centroid=100.0 * (pid + 1),
        avg_server_side_latency=latency_ms * MS,
        avg_tier_service_time=[s * MS for s in services_ms],
        current_load=10.0,
        fraction=fraction,
        path_count=10,
    )


def _obs(patterns=None, cur=(3, 3, 3), counts=(4, 4, 4), util=(0.1, 0.2, 0.3),
         avg=None, services=None):
    window = None
    if patterns is not None:
        window = PatternWindow(0, 1_000_000, patterns, sum(p.path_count for p in patterns))
    return ControllerObservation(
        window=window,
        per_node_utilization=list(util),
        current_freq=tuple(cur),
        period_index=0,
        level_counts=tuple(counts),
        all_avg_latency=avg,
        all_avg_tier_service=services,
    )


def test_step_up_picks_max_service_tier_of_worst_pattern():
    zone = ThresholdZone((10.0 * MS, 10.0 * MS))
    patterns = [
        _pattern(0, latency_ms=13.0, services_ms=(1, 2, 30)),   # 1.3*TH: violating
        _pattern(1, latency_ms=9.0, services_ms=(30, 2, 1)),    # inside
    ]
    decision = powertracer_step(_obs(patterns, cur=(1, 1, 1)), zone)
    assert decision.direction == "up"
    assert decision.changed_tier == 2
    assert decision.new_freq == (1, 1, 2)


def test_step_down_uses_fraction_weighted_min_service_tier():
    zone = ThresholdZone((10.0 * MS, 10.0 * MS))
    patterns = [
        _pattern(0, latency_ms=5.0, services_ms=(0.1, 5, 40)),
        _pattern(1, latency_ms=7.0, services_ms=(0.1, 5, 40)),
    ]
    decision = powertracer_step(_obs(patterns, cur=(2, 2, 2)), zone)
    assert decision.direction == "down"
    assert decision.changed_tier == 0
    assert decision.new_freq == (1, 2, 2)


def test_hold_inside_zone():
    zone = ThresholdZone((10.0 * MS,))
    patterns = [_pattern(0, latency_ms=10.0, services_ms=(1, 2, 7))]
    decision = powertracer_step(_obs(patterns), zone)
    assert decision.direction == "hold"
    assert decision.reason == "in-zone"
    assert decision.new_freq == (3, 3, 3)


def test_empty_window_holds_with_no_data():
    zone = ThresholdZone((10.0 * MS,))
    decision = powertracer_step(_obs(patterns=[]), zone)
    assert decision.direction == "hold"
    assert decision.reason == "no-data"


def test_up_falls_through_when_dominant_tier_maxed():
    zone = ThresholdZone((10.0 * MS,))
    patterns = [_pattern(0, latency_ms=20.0, services_ms=(1, 2, 30))]
    decision = powertracer_step(_obs(patterns, cur=(0, 0, 3)), zone)
    assert decision.changed_tier == 1  # db at max; next-largest service is tier 1
    decision = powertracer_step(_obs(patterns, cur=(3, 3, 3)), zone)
    assert decision.direction == "hold"
    assert decision.reason == "all-max"


def test_down_skips_tiers_at_min():
    zone = ThresholdZone((100.0 * MS,))
    patterns = [_pattern(0, latency_ms=5.0, services_ms=(0.1, 5, 40))]
    decision = powertracer_step(_obs(patterns, cur=(0, 2, 2)), zone)
    assert decision.changed_tier == 1
    decision = powertracer_step(_obs(patterns, cur=(0, 0, 0)), zone)
    assert decision.reason == "all-min"


def test_worst_relative_excess_breaks_ties():
    zone = ThresholdZone((10.0 * MS, 10.0 * MS))
    patterns = [
        _pattern(0, latency_ms=13.0, services_ms=(9, 1, 1)),
        _pattern(1, latency_ms=15.0, services_ms=(1, 9, 1)),  # worse excess
    ]
    decision = powertracer_step(_obs(patterns, cur=(1, 1, 1)), zone)
    assert decision.changed_tier == 1


def test_np_step_examples():
    zone = ThresholdZone((10.0 * MS,))
    up = powertracer_np_step(
        _obs(avg=13.0 * MS, services=[1 * MS, 2 * MS, 30 * MS], cur=(1, 1, 1)), zone
    )
    assert (up.direction, up.changed_tier) == ("up", 2)
    down = powertracer_np_step(
        _obs(avg=5.0 * MS, services=[0.5 * MS, 5 * MS, 30 * MS], cur=(1, 1, 1)), zone
    )
    assert (down.direction, down.changed_tier) == ("down", 0)
    hold = powertracer_np_step(
        _obs(avg=10.0 * MS, services=[1 * MS, 2 * MS, 3 * MS]), zone
    )
    assert hold.direction == "hold"


def test_simpledvs_examples():
    zone = ThresholdZone((10.0 * MS,))
    up = simpledvs_step(_obs(avg=13.0 * MS, util=(0.2, 0.5, 0.9), cur=(1, 1, 1)), zone)
    assert (up.direction, up.changed_tier) == ("up", 2)
    down = simpledvs_step(_obs(avg=5.0 * MS, util=(0.2, 0.5, 0.9), cur=(1, 1, 1)), zone)
    assert (down.direction, down.changed_tier) == ("down", 0)
    hold = simpledvs_step(_obs(avg=10.0 * MS, util=(0.2, 0.5, 0.9)), zone)
    assert hold.direction == "hold"


def test_ondemand_rule():
    levels = (1.0, 1.8, 2.0, 2.2)
    assert ondemand_step(0.95, 0, levels) == 3  # jump to max
    assert ondemand_step(0.0, 3, levels) == 0  # idle -> min
    # u=0.4 at 2.2 GHz: 0.4*2.2/1.0 = 0.88 > 0.8, 0.4*2.2/1.8 = 0.489 <= 0.8
    assert ondemand_step(0.4, 3, levels) == 1
    assert levels[ondemand_step(0.4, 3, levels)] == 1.8


def test_zone_validation():
    with pytest.raises(ValueError):
        ThresholdZone((1.0,), up=0.9)
    with pytest.raises(ValueError):
        ThresholdZone((0.0,))
    with pytest.raises(ValueError):
        Schedule(0, 1, 1)


def test_step_property_sample():
    """Randomized check of branch exclusivity, single +-1 moves, clamping."""
    rng = random.Random(4242)
    zone = ThresholdZone(tuple(rng.uniform(5, 50) * MS for _ in range(3)))
    for _ in range(2000):
        n = rng.randint(1, 3)
        patterns = [
            _pattern(
                i,
                latency_ms=rng.uniform(0.5, 100.0),
                services_ms=tuple(rng.uniform(0, 40) for _ in range(3)),
                fraction=rng.random() + 0.01,
            )
            for i in range(n)
        ]
        cur = tuple(rng.randint(0, 3) for _ in range(3))
        obs = _obs(patterns, cur=cur)
        decision = powertracer_step(obs, zone)
        diffs = [
            (j, decision.new_freq[j] - cur[j])
            for j in range(3)
            if decision.new_freq[j] != cur[j]
        ]
        assert all(0 <= decision.new_freq[j] <= 3 for j in range(3))
        if decision.direction == "hold":
            assert diffs == []
        else:
            assert len(diffs) == 1
            j, delta = diffs[0]
            assert j == decision.changed_tier
            assert delta == (1 if decision.direction == "up" else -1)
        above = any(
            p.avg_server_side_latency > zone.up * zone.th[p.pattern_id] for p in patterns
        )
        below_all = all(
            p.avg_server_side_latency < zone.lp * zone.th[p.pattern_id] for p in patterns
        )
        if decision.direction == "up":
            assert above
        if decision.direction == "down":
            assert below_all
        if not above and not below_all:
            assert decision.direction == "hold"


# ---------------------------------------------------------------------------
# control loop behavior inside the simulator
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def quick_model():
    def runner(clients, fvec, duration_s, seed):
        wl = read_only_workload(
            clients, up_ramp_s=2.0, runtime_s=duration_s - 2.0, down_ramp_s=0.0
        )
        return run_sim(
            DEFAULT_NODES, wl, seed=seed, duration_s=duration_s, initial_levels=list(fvec)
        ).activity_log

    wl0 = read_only_workload(1)
    loads = [(nominal_load(c, wl0), c) for c in (100, 200, 300, 400, 500)]
    tracker = PatternTracker()
    tracker.seed(pattern_seed_centroids(wl0))
    ds = run_profiling(
        runner, loads, [n.freq_levels_ghz for n in DEFAULT_NODES], (2,), 16.0, 5000,
        tracker=tracker,
    )
    return fit_model(ds)


def test_constant_in_zone_load_always_holds():
    wl = read_only_workload(60, up_ramp_s=2.0, runtime_s=58.0, down_ramp_s=0.0)
    zone = ThresholdZone((40.0 * MS,), up=3.0, lp=0.05)  # cavernous zone
    loop = SimpleDVSLoop(zone)
    run_sim(DEFAULT_NODES, wl, controller=loop, seed=5)
    assert loop.records
    assert all(r.direction == "hold" for r in loop.records)


def test_schedule_yields_60_windows_over_300s():
    wl = read_only_workload(30, up_ramp_s=2.0, runtime_s=300.0, down_ramp_s=0.0)
    zone = ThresholdZone((40.0 * MS,), up=3.0, lp=0.05)
    loop = SimpleDVSLoop(zone)
    run_sim(DEFAULT_NODES, wl, controller=loop, seed=5, duration_s=300.0)
    assert len(loop.records) == 60


def test_load_step_triggers_exactly_one_fast_modulation(quick_model):
    wl = read_only_workload(
        100,
        up_ramp_s=2.0,
        runtime_s=118.0,
        down_ramp_s=0.0,
        client_steps=((60.0, 400),),
    )
    zone = ThresholdZone(tuple(12_000.0 * (i + 1) * 3 for i in range(5)))
    loop = PowerTracerLoop(
        zone, quick_model, power_model_for(DEFAULT_NODES), tracker=PatternTracker()
    )
    loop.tracker.seed(pattern_seed_centroids(wl))
    run_sim(DEFAULT_NODES, wl, controller=loop, seed=9)
    fasts = [r for r in loop.records if r.reason == "fast-modulation"]
    # settled by t=30s; the only later fast modulation is the step at t=60s
    steady_before = [r for r in fasts if 30_000_000 < r.t_us <= 60_000_000]
    after = [r for r in fasts if r.t_us > 60_000_000]
    assert steady_before == []
    assert len(after) == 1


def test_ondemand_loop_rescales_independently():
    wl = read_only_workload(300, up_ramp_s=2.0, runtime_s=40.0, down_ramp_s=0.0)
    loop = OndemandLoop()
    result = run_sim(DEFAULT_NODES, wl, controller=loop, seed=3)
    assert loop.records, "ondemand never changed any level"
    # the front tier is nearly idle: it must end below max frequency
    final_web = [lv for _, tier, _, lv in result.scaler_log if tier == 0]
    assert final_web and final_web[-1] < 3

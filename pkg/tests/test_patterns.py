import random

import pytest

from powertracer.patterns import (
    PatternTracker,
    classify,
    estimate_load,
    quantize_load,
    top_patterns,
    within_cluster_ss,
)
from powertracer.tracelog import Activity, ActivityKind, ActivityLog, CausalPath


def _path(size, latency=1000, tiers=(100, 200, 500)):
    return CausalPath(
        activities=[],
        request_id=0,
        first_message_size=size,
        server_side_latency=latency,
        tier_service_time=list(tiers),
        complete=True,
    )


def optimal_1d_wcss(values, k):
    """Dynamic-programming oracle: minimal within-cluster sum of squares."""
    xs = sorted(values)
    n = len(xs)
    pre = [0.0] * (n + 1)
    pre2 = [0.0] * (n + 1)
    for i, x in enumerate(xs):
        pre[i + 1] = pre[i] + x
        pre2[i + 1] = pre2[i] + x * x

    def cost(i, j):  # inclusive sorted range
        cnt = j - i + 1
        s = pre[j + 1] - pre[i]
        s2 = pre2[j + 1] - pre2[i]
        return s2 - s * s / cnt

    inf = float("inf")
    dp = [[inf] * n for _ in range(k + 1)]
    for j in range(n):
        dp[1][j] = cost(0, j)
    for m in range(2, k + 1):
        for j in range(n):
            best = dp[m - 1][j]  # an empty m-th cluster is allowed
            for i in range(1, j + 1):
                cand = dp[m - 1][i - 1] + cost(i, j)
                if cand < best:
                    best = cand
            dp[m][j] = best
    return dp[k][n - 1]


def test_single_size_collapses_to_one_cluster():
    paths = [_path(500) for _ in range(20)]
    result = classify(paths, k=3)
    assert len(result.centroids) == 1
    assert set(result.labels) == {0}
    assert result.centroids[0] == 500.0


def test_two_well_separated_sizes_split_exactly():
    paths = [_path(100) for _ in range(50)] + [_path(5000) for _ in range(50)]
    result = classify(paths, k=2)
    assert result.centroids == [100.0, 5000.0]
    assert result.labels[:50] == [0] * 50
    assert result.labels[50:] == [1] * 50


def test_no_complete_paths_raises():
    incomplete = CausalPath(activities=[], request_id=0, complete=False)
    with pytest.raises(ValueError, match="no paths"):
        classify([incomplete], k=2)


def test_seven_classes_k10_matches_dp_oracle():
    rng = random.Random(7)
    sizes = [310, 720, 1180, 1650, 2210, 2840, 3530]
    values = [rng.choice(sizes) for _ in range(200)]
    paths = [_path(v) for v in values]
    result = classify(paths, k=10)
    got = within_cluster_ss([float(v) for v in values], result.labels, result.centroids)
    assert got == pytest.approx(optimal_1d_wcss(values, 10), abs=1e-9)
    assert got == 0.0  # seven exact sizes: grouping by value is perfect


def test_jittered_classes_match_dp_oracle():
    rng = random.Random(21)
    centers = [1000, 5000, 9000, 13000, 17000]
    values = [c + rng.uniform(-40, 40) for c in centers for _ in range(30)]
    rng.shuffle(values)
    paths = [_path(v) for v in values]
    result = classify(paths, k=5)
    got = within_cluster_ss(values, result.labels, result.centroids)
    assert got == pytest.approx(optimal_1d_wcss(values, 5), rel=1e-9)


def test_wcss_never_increases_across_iterations():
    rng = random.Random(3)
    values = [rng.uniform(0, 10_000) for _ in range(400)]
    result = classify([_path(v) for v in values], k=6)
    traj = result.wcss_trajectory
    assert all(a >= b - 1e-6 for a, b in zip(traj, traj[1:]))


def test_classify_deterministic_and_seed_independent():
    rng = random.Random(5)
    paths = [_path(rng.uniform(0, 1000)) for _ in range(100)]
    a = classify(paths, k=4, seed=1)
    b = classify(paths, k=4, seed=999)
    assert a.labels == b.labels
    assert a.centroids == b.centroids


def test_top_patterns_single_class():
    paths = [_path(800) for _ in range(40)]
    window = top_patterns(paths, k=10, n_top=5, window_start=0, window_end=1_000_000)
    assert len(window.patterns) == 1
    assert window.patterns[0].fraction == 1.0
    assert window.patterns[0].path_count == 40


def test_top_patterns_fractions_match_group_by():
    rng = random.Random(11)
    sizes = [100, 900, 2500]
    weights = [0.5, 0.3, 0.2]
    values = rng.choices(sizes, weights=weights, k=1000)
    paths = [_path(v) for v in values]
    window = top_patterns(paths, k=10, n_top=3, window_start=0, window_end=10_000_000)
    counts = {s: values.count(s) for s in sizes}
    expected = sorted((c / 1000 for c in counts.values()), reverse=True)
    got = [p.fraction for p in window.patterns]
    assert got == pytest.approx(expected)
    assert got == sorted(got, reverse=True)
    assert sum(got) == pytest.approx(1.0)


def test_top_patterns_orders_and_truncates():
    paths = [_path(1) for _ in range(6)] + [_path(100) for _ in range(3)] + [_path(10_000)]
    window = top_patterns(paths, k=5, n_top=2, window_start=0, window_end=1_000_000)
    assert [p.path_count for p in window.patterns] == [6, 3]
    assert sum(p.fraction for p in window.patterns) <= 1.0 + 1e-12


def test_pattern_stats_mean_values():
    paths = [
        _path(100, latency=1000, tiers=(10, 20, 30)),
        _path(100, latency=3000, tiers=(30, 40, 50)),
    ]
    window = top_patterns(paths, k=3, n_top=1, window_start=0, window_end=2_000_000)
    p = window.patterns[0]
    assert p.avg_server_side_latency == 2000
    assert p.avg_tier_service_time == [20, 30, 40]
    assert p.current_load == pytest.approx(2 / 2.0)


def test_tracker_inherits_ids_by_nearest_centroid():
    tracker = PatternTracker()
    assert tracker.assign([100.0, 900.0]) == [0, 1]
    # next window: slightly shifted centroids, one new pattern
    assert tracker.assign([905.0, 98.0, 5000.0]) == [1, 0, 2]
    # a vanished pattern keeps its id reserved
    assert tracker.assign([4990.0]) == [2]


def test_tracker_seeding_fixes_canonical_order():
    tracker = PatternTracker()
    tracker.seed([310.0, 720.0, 1180.0])
    assert tracker.assign([1180.0, 310.0]) == [2, 0]


def test_estimate_load_zero_and_direct():
    empty = ActivityLog([], 1)
    assert estimate_load(empty, 5_000_000) == 0.0
    acts = [Activity(i, ActivityKind.BEGIN, 0, "w") for i in range(250)]
    log = ActivityLog(acts, 1)
    assert estimate_load(log, 5_000_000) == pytest.approx(50.0)


def test_quantize_load_rules():
    levels = [10.0, 20.0]
    assert quantize_load(0.0, levels) == 10.0
    assert quantize_load(14.9, levels) == 10.0
    assert quantize_load(15.0, levels) == 20.0  # exact midpoint rounds up
    assert quantize_load(1_000.0, levels) == 20.0
    assert quantize_load(10.0, levels) == 10.0

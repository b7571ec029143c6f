"""Classify causal paths into patterns and derive per-pattern statistics.

Patterns are clusters of paths grouped by the size of the first message the
client sent, found with a deterministic 1-D k-means (evenly spaced quantile
seeding, assign/update until stable).  Each pattern yields the 5-tuple record
(pattern id, first-message-size centroid, average server-side latency,
average per-tier service time, current load) plus fraction bookkeeping used
to pick the top-N major patterns.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .tracelog import ActivityKind, ActivityLog, CausalPath

KMEANS_MAX_ITER = 100


@dataclass(slots=True)
class Clustering:
    """k-means outcome: one label per input path, clusters in ascending centroid order."""

    labels: list[int]
    centroids: list[float]
    iterations: int
    wcss_trajectory: list[float]


@dataclass(slots=True)
class PatternStats:
    """Per-pattern online performance record (the 5-tuple plus bookkeeping)."""

    pattern_id: int
    first_message_size_centroid: float
    avg_server_side_latency: float
    avg_tier_service_time: list[float]
    current_load: float
    fraction: float
    path_count: int


@dataclass(slots=True)
class PatternWindow:
    """Top-N pattern statistics for one sampling window."""

    window_start: int
    window_end: int
    patterns: list[PatternStats] = field(default_factory=list)
    total_begin_count: int = 0


def classify(paths: list[CausalPath], k: int, seed: int = 0) -> Clustering:
    """1-D k-means over first-message sizes of complete paths.

    Deterministic for a fixed input order: centroids start at k evenly spaced
    quantiles of the size distribution, assignment ties go to the lowest
    cluster index, and empty clusters are dropped at the end (the effective k
    may shrink).  ``seed`` is accepted for interface stability; the quantile
    seeding needs no randomness.
    """
    del seed
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    values = np.array([p.first_message_size for p in paths if p.complete], dtype=float)
    if values.size == 0:
        raise ValueError("no paths to classify")
    n = values.size
    distinct = np.unique(values)
    if distinct.size <= k:
        # Grouping by exact value is the optimal clustering; skip straight there.
        centroids = distinct.astype(float)
        k = centroids.size
    else:
        ordered = np.sort(values)
        centroids = ordered[[min(n - 1, int((i + 0.5) * n / k)) for i in range(k)]].copy()

    labels = np.full(n, -1, dtype=int)
    iterations = 0
    trajectory: list[float] = []
    for _ in range(KMEANS_MAX_ITER):
        iterations += 1
        dist = np.abs(values[:, None] - centroids[None, :])
        new_labels = np.argmin(dist, axis=1)  # argmin keeps the lowest index on ties
        trajectory.append(float((dist[np.arange(n), new_labels] ** 2).sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums = np.bincount(labels, weights=values, minlength=k)
        counts = np.bincount(labels, minlength=k)
        occupied = counts > 0
        centroids[occupied] = sums[occupied] / counts[occupied]

    keep = sorted(np.unique(labels), key=lambda c: centroids[c])
    relabel = {old: new for new, old in enumerate(keep)}
    return Clustering(
        labels=[relabel[c] for c in labels],
        centroids=[float(centroids[c]) for c in keep],
        iterations=iterations,
        wcss_trajectory=trajectory,
    )


def within_cluster_ss(values: list[float], labels: list[int], centroids: list[float]) -> float:
    """Total within-cluster sum of squared distances."""
    return float(sum((v - centroids[c]) ** 2 for v, c in zip(values, labels)))


class PatternTracker:
    """Keeps pattern ids stable across windows by nearest-centroid matching.

    A pattern in a new window inherits the id of the tracked pattern with the
    closest first-message-size centroid (greedy, each side matched at most
    once); unmatched patterns get fresh ids.
    """

    def __init__(self) -> None:
        self._centroids: dict[int, float] = {}
        self._next_id = 0

    def seed(self, centroids: list[float]) -> None:
        """Pre-register centroids so ids 0..n-1 follow the given order."""
        for c in centroids:
            self._centroids[self._next_id] = float(c)
            self._next_id += 1

    def assign(self, centroids: list[float]) -> list[int]:
        candidates = sorted(
            (abs(c - old_c), i, old_id)
            for i, c in enumerate(centroids)
            for old_id, old_c in sorted(self._centroids.items())
        )
        ids: dict[int, int] = {}
        used: set[int] = set()
        for _, i, old_id in candidates:
            if i in ids or old_id in used:
                continue
            ids[i] = old_id
            used.add(old_id)
        out = []
        for i, c in enumerate(centroids):
            pid = ids.get(i)
            if pid is None:
                pid = self._next_id
                self._next_id += 1
            self._centroids[pid] = c
            out.append(pid)
        return out


def top_patterns(
    paths: list[CausalPath],
    k: int,
    n_top: int,
    seed: int = 0,
    window_start: int = 0,
    window_end: int = 0,
    begin_count: int | None = None,
    tracker: PatternTracker | None = None,
) -> PatternWindow:
    """Cluster a window's paths and keep the N largest patterns by fraction."""
    if n_top < 1:
        raise ValueError(f"N must be >= 1, got {n_top}")
    complete = [p for p in paths if p.complete]
    clustering = classify(paths, k, seed)
    if begin_count is None:
        begin_count = len(paths)
    span_s = max(window_end - window_start, 0) / 1e6
    load = begin_count / span_s if span_s > 0 else 0.0

    n_clusters = len(clustering.centroids)
    counts = [0] * n_clusters
    lat_sum = [0] * n_clusters
    tier_count = max((len(p.tier_service_time) for p in complete), default=0)
    svc_sum = [[0] * tier_count for _ in range(n_clusters)]
    for p, c in zip(complete, clustering.labels):
        counts[c] += 1
        lat_sum[c] += p.server_side_latency
        for j, t in enumerate(p.tier_service_time):
            svc_sum[c][j] += t

    order = sorted(range(n_clusters), key=lambda c: (-counts[c], clustering.centroids[c]))
    ordered_centroids = [clustering.centroids[c] for c in order]
    if tracker is not None:
        ids = tracker.assign(ordered_centroids)
    else:
        ids = list(range(n_clusters))

    stats = []
    total = len(complete)
    for rank, c in enumerate(order):
        stats.append(
            PatternStats(
                pattern_id=ids[rank],
                first_message_size_centroid=clustering.centroids[c],
                avg_server_side_latency=lat_sum[c] / counts[c],
                avg_tier_service_time=[s / counts[c] for s in svc_sum[c]],
                current_load=load,
                fraction=counts[c] / total,
                path_count=counts[c],
            )
        )
    return PatternWindow(
        window_start=window_start,
        window_end=window_end,
        patterns=stats[:n_top],
        total_begin_count=begin_count,
    )


def estimate_load(log: ActivityLog, window_us: int) -> float:
    """BEGIN activities per second over a window of the given length."""
    if window_us <= 0:
        raise ValueError(f"window must be positive, got {window_us}")
    begins = sum(1 for a in log.activities if a.kind is ActivityKind.BEGIN)
    return begins / (window_us / 1e6)


def quantize_load(rate: float, levels: list[float]) -> float:
    """Snap a measured request rate to the nearest profiled load level.

    Exact midpoints round up; rates outside the profiled range clamp to the
    nearest end.
    """
    if not levels:
        raise ValueError("levels must be non-empty")
    i = bisect.bisect_left(levels, rate)
    if i == 0:
        return levels[0]
    if i == len(levels):
        return levels[-1]
    below, above = levels[i - 1], levels[i]
    return below if rate - below < above - rate else above


def pattern_csv_rows(windows: list[PatternWindow], tier_count: int) -> list[str]:
    """Render pattern windows as 5-tuple CSV lines (header included)."""
    header = (
        "window_start_us,pattern_id,first_msg_size,avg_latency_us,"
        + ",".join(f"svc_t{j}_us" for j in range(tier_count))
        + ",load_rps,fraction"
    )
    rows = [header]
    for w in windows:
        for p in w.patterns:
            svc = p.avg_tier_service_time + [0.0] * (tier_count - len(p.avg_tier_service_time))
            rows.append(
                f"{w.window_start},{p.pattern_id},{p.first_message_size_centroid:.6f},"
                f"{p.avg_server_side_latency:.6f},"
                + ",".join(f"{s:.6f}" for s in svc[:tier_count])
                + f",{p.current_load:.6f},{p.fraction:.9f}"
            )
    return rows

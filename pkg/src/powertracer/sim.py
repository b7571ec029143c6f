"""Deterministic discrete-event simulator of an M-tier service on DVFS nodes.

Closed-loop clients driven by a row-stochastic transition table issue typed
requests that hop across tiers (multi-server FIFO queues, frequency-scaled
CPU demands, fixed per-hop network latency).  The simulator emits the trace
log the analyzer consumes (BEGIN/END at tier 0, SEND/RECEIVE with unique
message ids at every inter-tier hop), keeps per-request ground truth for test
oracles, and integrates a utilization-and-frequency dependent power model.

Times are integer microseconds throughout; identical inputs and seed yield
bit-identical results.  Frequency changes apply to service slots that start
after the change; in-flight work finishes at the rate it started with.
"""

from __future__ import annotations

import heapq
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .tracelog import Activity, ActivityKind, ActivityLog

# event codes, dispatched in (time, insertion order)
_ISSUE, _ARRIVE, _DONE, _CONTROL, _SAMPLE = range(5)


@dataclass(frozen=True)
class PowerParams:
    """Node power: idle floor plus dynamic term scaled by utilization and (f/f_max)^alpha."""

    p_idle_w: float
    p_dyn_max_w: float
    alpha: float = 3.0


@dataclass(frozen=True)
class NodeSpec:
    tier: int
    freq_levels_ghz: tuple[float, ...]
    server_count: int
    power: PowerParams

    def __post_init__(self) -> None:
        if list(self.freq_levels_ghz) != sorted(set(self.freq_levels_ghz)):
            raise ValueError(f"freq levels must be strictly increasing: {self.freq_levels_ghz}")
        if self.server_count < 1:
            raise ValueError("server_count must be >= 1")


@dataclass(frozen=True)
class RequestClass:
    """One request type: its size signature and per-tier CPU demands in call order.

    ``hops`` lists (tier, demand_cycles) visits; consecutive visits exchange a
    message over the network.  A hop's service time at f GHz is
    demand_cycles / (f * 1e9) seconds.  Multi-entry hop lists support repeated
    visits to the same tier (e.g. several database calls per request).
    """

    name: str
    request_size: int
    hops: tuple[tuple[int, int], ...]
    reply_size: int = 1024


@dataclass
class WorkloadSpec:
    """Closed-loop client population over a request-class transition table."""

    name: str
    classes: tuple[RequestClass, ...]
    transition: tuple[tuple[float, ...], ...]
    client_count: int
    think_time_mean_us: int = 7_000_000
    up_ramp_s: float = 10.0
    runtime_s: float = 300.0
    down_ramp_s: float = 10.0
    client_steps: tuple[tuple[float, int], ...] = ()

    def __post_init__(self) -> None:
        if len(self.transition) != len(self.classes):
            raise ValueError("transition table must have one row per request class")
        for row in self.transition:
            if len(row) != len(self.classes):
                raise ValueError("transition table must be square")
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"transition row sums to {sum(row)}, expected 1")

    @property
    def total_duration_s(self) -> float:
        return self.up_ramp_s + self.runtime_s + self.down_ramp_s


@dataclass(slots=True)
class RequestRecord:
    """Ground truth for one request; consumed only by oracles and metrics."""

    request_id: int
    class_index: int
    class_name: str
    first_message_size: int
    issue_us: int
    begin_us: int = -1
    end_us: int = -1
    tier_intervals: list[list[tuple[int, int]]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.end_us >= 0

    @property
    def latency_us(self) -> int:
        return self.end_us - self.begin_us


class ControlHook(Protocol):
    """Periodic controller interface the simulator drives.

    ``schedule_us`` is (invocation interval, observation window length);
    ``on_window`` runs right after each window closes and may actuate
    frequencies through the view.
    """

    @property
    def schedule_us(self) -> tuple[int, int]: ...

    def on_window(self, view: "Simulation", window_start_us: int, window_end_us: int) -> None: ...


class _Node:
    __slots__ = (
        "spec", "levels_mhz", "level", "busy", "queue", "free_slots",
        "slot_busy_since", "service_intervals", "busy_slot_us", "energy_wus",
        "last_flush_us", "ratio_pow",
    )

    def __init__(self, spec: NodeSpec, level: int):
        self.spec = spec
        self.levels_mhz = tuple(round(g * 1000) for g in spec.freq_levels_ghz)
        self.level = level
        self.busy = 0
        self.queue: deque = deque()
        self.free_slots = list(range(spec.server_count))
        heapq.heapify(self.free_slots)
        self.slot_busy_since: list[int | None] = [None] * spec.server_count
        self.service_intervals: list[tuple[int, int, int]] = []  # (start, end, slot)
        self.busy_slot_us = 0
        self.energy_wus = 0.0
        self.last_flush_us = 0
        f_max = self.levels_mhz[-1]
        self.ratio_pow = tuple((m / f_max) ** spec.power.alpha for m in self.levels_mhz)

    def power_now_w(self) -> float:
        p = self.spec.power
        u = self.busy / self.spec.server_count
        return p.p_idle_w + p.p_dyn_max_w * u * self.ratio_pow[self.level]

    def flush(self, now_us: int) -> None:
        dt = now_us - self.last_flush_us
        if dt > 0:
            self.energy_wus += self.power_now_w() * dt
            self.busy_slot_us += self.busy * dt
            self.last_flush_us = now_us

    def service_us(self, demand_cycles: int) -> int:
        f = self.levels_mhz[self.level]
        return (demand_cycles + f // 2) // f


@dataclass(slots=True)
class _Request:
    record: RequestRecord
    client: int
    hops: tuple[tuple[int, int], ...]
    workers: dict[int, str]
    visit_arrive: dict[int, int]
    last_hop_on_tier: dict[int, int]


@dataclass
class SimResult:
    """Everything one run produced: the trace, ground truth, power and events."""

    activity_log: ActivityLog
    requests: list[RequestRecord]
    duration_us: int
    node_energy_j: list[float]
    power_trace: list[tuple[int, tuple[float, ...]]]
    scaler_log: list[tuple[int, int, int, int]]
    node_specs: tuple[NodeSpec, ...]
    seed: int
    clients: int
    workload_name: str
    service_intervals: list[list[tuple[int, int, int]]]

    @property
    def total_energy_j(self) -> float:
        return sum(self.node_energy_j)

    @property
    def mean_power_w(self) -> float:
        return self.total_energy_j / (self.duration_us / 1e6)

    @property
    def completed(self) -> list[RequestRecord]:
        return [r for r in self.requests if r.complete]

    @property
    def mean_latency_us(self) -> float:
        done = self.completed
        if not done:
            return 0.0
        return sum(r.latency_us for r in done) / len(done)

    def miss_ratio(self, deadline_us: int) -> float:
        done = self.completed
        if not done:
            return 0.0
        return sum(1 for r in done if r.latency_us > deadline_us) / len(done)

    def utilization(self, tier: int, start_us: int, end_us: int) -> float:
        busy = _overlap_sum(self.service_intervals[tier], start_us, end_us)
        slots = self.node_specs[tier].server_count
        return busy / (slots * (end_us - start_us)) if end_us > start_us else 0.0


def _overlap_sum(intervals: list[tuple[int, int, int]], start: int, end: int) -> int:
    total = 0
    for s, e, _slot in reversed(intervals):
        if e <= start:
            break
        total += max(0, min(e, end) - max(s, start))
    return total


class Simulation:
    """One seeded run over a single global event queue.

    The instance doubles as the controller's view: it exposes window slices
    of the trace, utilization queries and the ``set_frequency`` actuation
    hook.  One simulation owns all of its state; runs share nothing.
    """

    def __init__(
        self,
        nodes: Sequence[NodeSpec],
        workload: WorkloadSpec,
        seed: int,
        controller: ControlHook | None = None,
        duration_s: float | None = None,
        network_hop_us: int = 200,
        initial_levels: Sequence[int] | None = None,
        power_sample_interval_s: float = 1.0,
    ):
        specs = tuple(sorted(nodes, key=lambda n: n.tier))
        if [n.tier for n in specs] != list(range(len(specs))):
            raise ValueError("node tiers must be 0..M-1")
        if initial_levels is None:
            initial_levels = [len(n.freq_levels_ghz) - 1 for n in specs]
        self.node_specs = specs
        self.nodes = [_Node(spec, lvl) for spec, lvl in zip(specs, initial_levels)]
        self.workload = workload
        self.seed = seed
        self.rng = random.Random(seed)
        self.network_hop_us = int(network_hop_us)
        self.controller = controller
        self.duration_us = int(
            round((duration_s if duration_s is not None else workload.total_duration_s) * 1e6)
        )
        self.cutoff_us = int(round((workload.up_ramp_s + workload.runtime_s) * 1e6))
        self.sample_interval_us = int(round(power_sample_interval_s * 1e6))
        self.now_us = 0

        self.activities: list[Activity] = []
        self._act_ts: list[int] = []
        self.requests: list[RequestRecord] = []
        self._live: dict[int, _Request] = {}
        self.scaler_log: list[tuple[int, int, int, int]] = []
        self.power_trace: list[tuple[int, tuple[float, ...]]] = []
        self._last_sample_energy = [0.0] * len(specs)

        self._heap: list[tuple[int, int, int, tuple]] = []
        self._seq = 0
        self._next_mid = 0
        self._free_workers: list[list[int]] = [[] for _ in specs]
        self._next_worker: list[int] = [0] * len(specs)
        self._client_state: list[int] = []
        self._cum_rows: list[list[float]] = [
            [sum(row[: j + 1]) for j in range(len(row))] for row in workload.transition
        ]

    # -- event plumbing -------------------------------------------------

    def _push(self, t: int, code: int, data: tuple = ()) -> None:
        heapq.heappush(self._heap, (t, self._seq, code, data))
        self._seq += 1

    def _emit(
        self,
        t: int,
        kind: ActivityKind,
        tier: int,
        context: str,
        peer: str | None = None,
        mid: int | None = None,
        size: int | None = None,
        hint: int | None = None,
    ) -> None:
        self.activities.append(Activity(t, kind, tier, context, peer, mid, size, hint))
        self._act_ts.append(t)

    def _alloc_worker(self, tier: int) -> str:
        pool = self._free_workers[tier]
        if pool:
            wid = heapq.heappop(pool)
        else:
            wid = self._next_worker[tier]
            self._next_worker[tier] += 1
        return f"n{tier}.w{wid}"

    def _release_worker(self, tier: int, ctx: str) -> None:
        wid = int(ctx.rsplit("w", 1)[1])
        heapq.heappush(self._free_workers[tier], wid)

    # -- Scaler actuation hook ------------------------------------------

    def set_frequency(self, tier: int, level: int) -> None:
        """Change one node's frequency level, effective immediately for new work."""
        node = self.nodes[tier]
        if not 0 <= level < len(node.levels_mhz):
            raise ValueError(f"invalid level {level} for tier {tier}")
        node.flush(self.now_us)
        self.scaler_log.append((self.now_us, tier, node.level, level))
        node.level = level

    @property
    def current_levels(self) -> tuple[int, ...]:
        return tuple(n.level for n in self.nodes)

    @property
    def freq_lists(self) -> tuple[tuple[float, ...], ...]:
        return tuple(n.freq_levels_ghz for n in self.node_specs)

    # -- controller view -------------------------------------------------

    def window_log(self, start_us: int, end_us: int) -> ActivityLog:
        """Activities with start <= timestamp < end, in log order."""
        lo = _bisect_left(self._act_ts, start_us)
        hi = _bisect_left(self._act_ts, end_us)
        return ActivityLog(self.activities[lo:hi], len(self.nodes))

    def utilization(self, tier: int, start_us: int, end_us: int) -> float:
        node = self.nodes[tier]
        busy = _overlap_sum(node.service_intervals, start_us, end_us)
        for since in node.slot_busy_since:
            if since is not None:
                busy += max(0, min(self.now_us, end_us) - max(since, start_us))
        return busy / (node.spec.server_count * (end_us - start_us))

    def slot_utilization(self, tier: int, start_us: int, end_us: int) -> list[float]:
        node = self.nodes[tier]
        span = end_us - start_us
        busy = [0] * node.spec.server_count
        for s, e, slot in reversed(node.service_intervals):
            if e <= start_us:
                break
            busy[slot] += max(0, min(e, end_us) - max(s, start_us))
        for slot, since in enumerate(node.slot_busy_since):
            if since is not None:
                busy[slot] += max(0, min(self.now_us, end_us) - max(since, start_us))
        return [b / span for b in busy]

    # -- workload --------------------------------------------------------

    def _draw_class(self, client: int) -> int:
        row = self._cum_rows[self._client_state[client]]
        x = self.rng.random()
        for idx, upper in enumerate(row):
            if x < upper:
                self._client_state[client] = idx
                return idx
        self._client_state[client] = len(row) - 1
        return len(row) - 1

    def _schedule_next_issue(self, client: int, now: int) -> None:
        think = int(self.rng.expovariate(1e6 / self.workload.think_time_mean_us) * 1e6)
        t = now + max(think, 1)
        if t <= self.cutoff_us:
            self._push(t, _ISSUE, (client,))

    def _handle_issue(self, t: int, client: int) -> None:
        cls_idx = self._draw_class(client)
        rc = self.workload.classes[cls_idx]
        rid = len(self.requests)
        record = RequestRecord(
            request_id=rid,
            class_index=cls_idx,
            class_name=rc.name,
            first_message_size=rc.request_size,
            issue_us=t,
            tier_intervals=[[] for _ in self.nodes],
        )
        self.requests.append(record)
        last_on_tier: dict[int, int] = {}
        for i, (tier, _) in enumerate(rc.hops):
            last_on_tier[tier] = i
        req = _Request(
            record=record,
            client=client,
            hops=rc.hops,
            workers={rc.hops[0][0]: self._alloc_worker(rc.hops[0][0])},
            visit_arrive={},
            last_hop_on_tier=last_on_tier,
        )
        self._live[rid] = req
        mid = self._next_mid
        self._next_mid += 1
        self._push(
            t + self.network_hop_us,
            _ARRIVE,
            (rid, 0, mid, f"c{client}", rc.request_size),
        )

    def _handle_arrive(self, t: int, rid: int, hop: int, mid: int, from_ctx: str, size: int) -> None:
        req = self._live[rid]
        tier = req.hops[hop][0]
        if hop == 0:
            req.record.begin_us = t
            self._emit(t, ActivityKind.BEGIN, tier, req.workers[tier], hint=rid)
        node = self.nodes[tier]
        job = (rid, hop, mid, from_ctx, size)
        if node.free_slots:
            self._start_service(t, tier, job)
        else:
            node.queue.append(job)

    def _start_service(self, t: int, tier: int, job: tuple) -> None:
        # RECEIVE is stamped when a worker picks the message up, mirroring a
        # kernel-level read; queue delay therefore shows up in path gap time,
        # not in tier service time.
        rid, hop, mid, from_ctx, size = job
        req = self._live[rid]
        ctx = req.workers[tier]
        self._emit(t, ActivityKind.RECEIVE, tier, ctx, from_ctx, mid, size, rid)
        req.visit_arrive[tier] = req.record.begin_us if hop == 0 else t
        node = self.nodes[tier]
        slot = heapq.heappop(node.free_slots)
        node.flush(t)
        node.busy += 1
        node.slot_busy_since[slot] = t
        duration = node.service_us(req.hops[hop][1])
        self._push(t + duration, _DONE, (tier, rid, hop, slot))

    def _handle_done(self, t: int, tier: int, rid: int, hop: int, slot: int) -> None:
        node = self.nodes[tier]
        node.flush(t)
        node.busy -= 1
        started = node.slot_busy_since[slot]
        node.slot_busy_since[slot] = None
        node.service_intervals.append((started, t, slot))
        heapq.heappush(node.free_slots, slot)
        if node.queue:
            self._start_service(t, tier, node.queue.popleft())

        req = self._live[rid]
        ctx = req.workers[tier]
        arrive_ts = req.visit_arrive[tier]
        req.record.tier_intervals[tier].append((arrive_ts, t))
        if hop + 1 < len(req.hops):
            next_tier = req.hops[hop + 1][0]
            if next_tier not in req.workers:
                req.workers[next_tier] = self._alloc_worker(next_tier)
            peer = req.workers[next_tier]
            mid = self._next_mid
            self._next_mid += 1
            rc = self.workload.classes[req.record.class_index]
            size = rc.request_size if next_tier > tier else rc.reply_size
            self._emit(t, ActivityKind.SEND, tier, ctx, peer, mid, size, rid)
            if req.last_hop_on_tier[tier] == hop:
                self._release_worker(tier, ctx)
                del req.workers[tier]
            self._push(t + self.network_hop_us, _ARRIVE, (rid, hop + 1, mid, ctx, size))
        else:
            self._emit(t, ActivityKind.END, tier, ctx, hint=rid)
            req.record.end_us = t
            self._release_worker(tier, ctx)
            del self._live[rid]
            self._schedule_next_issue(req.client, t + self.network_hop_us)

    # -- sampling and control ---------------------------------------------

    def _handle_sample(self, t: int, prev_t: int) -> None:
        watts = []
        for i, node in enumerate(self.nodes):
            node.flush(t)
            delta = node.energy_wus - self._last_sample_energy[i]
            self._last_sample_energy[i] = node.energy_wus
            watts.append(delta / (t - prev_t) if t > prev_t else node.power_now_w())
        self.power_trace.append((t, tuple(watts)))

    def run(self) -> SimResult:
        wl = self.workload
        counts = [(0.0, wl.client_count)] + list(wl.client_steps)
        client = 0
        for step_i, (start_s, n_clients) in enumerate(counts):
            base_us = int(round(start_s * 1e6))
            ramp_us = int(round(wl.up_ramp_s * 1e6)) if step_i == 0 else 1_000_000
            for k in range(n_clients):
                self._client_state.append(0)
                activation = base_us + (ramp_us * k) // max(n_clients, 1)
                self._schedule_next_issue(client, activation)
                client += 1
        if self.controller is not None:
            interval, _window = self.controller.schedule_us
            t = interval
            while t <= self.duration_us:
                self._push(t, _CONTROL, ())
                t += interval
        t = self.sample_interval_us
        while t <= self.duration_us:
            self._push(t, _SAMPLE, ())
            t += self.sample_interval_us

        prev_sample = 0
        heap = self._heap
        while heap:
            t, _seq, code, data = heapq.heappop(heap)
            if t > self.duration_us:
                break
            self.now_us = t
            if code == _ISSUE:
                self._handle_issue(t, *data)
            elif code == _ARRIVE:
                self._handle_arrive(t, *data)
            elif code == _DONE:
                self._handle_done(t, *data)
            elif code == _CONTROL:
                interval, window = self.controller.schedule_us
                self.controller.on_window(self, max(0, t - window), t)
            elif code == _SAMPLE:
                self._handle_sample(t, prev_sample)
                prev_sample = t

        self.now_us = self.duration_us
        for node in self.nodes:
            node.flush(self.duration_us)
        if prev_sample < self.duration_us:
            self._handle_sample(self.duration_us, prev_sample)

        return SimResult(
            activity_log=ActivityLog(self.activities, len(self.nodes)),
            requests=self.requests,
            duration_us=self.duration_us,
            node_energy_j=[n.energy_wus / 1e6 for n in self.nodes],
            power_trace=self.power_trace,
            scaler_log=self.scaler_log,
            node_specs=self.node_specs,
            seed=self.seed,
            clients=wl.client_count,
            workload_name=wl.name,
            service_intervals=[n.service_intervals for n in self.nodes],
        )


def _bisect_left(arr: list[int], x: int) -> int:
    lo, hi = 0, len(arr)
    while lo < hi:
        mid = (lo + hi) // 2
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def run_sim(
    nodes: Sequence[NodeSpec],
    workload: WorkloadSpec,
    controller: ControlHook | None = None,
    duration_s: float | None = None,
    seed: int = 0,
    **kwargs,
) -> SimResult:
    """Build and execute one simulation; see :class:`Simulation`."""
    return Simulation(
        nodes, workload, seed=seed, controller=controller, duration_s=duration_s, **kwargs
    ).run()


def baseline_run(
    nodes: Sequence[NodeSpec],
    workload: WorkloadSpec,
    duration_s: float | None = None,
    seed: int = 0,
    **kwargs,
) -> SimResult:
    """Reference run with every node pinned at its maximum frequency."""
    return run_sim(nodes, workload, controller=None, duration_s=duration_s, seed=seed, **kwargs)


def cluster_power_w(nodes: Sequence[NodeSpec], freqs_ghz: Sequence[float], utilization: float = 1.0) -> float:
    """Cluster power at the given per-tier frequencies and a uniform utilization."""
    total = 0.0
    for spec, f in zip(nodes, freqs_ghz):
        ratio = (f / spec.freq_levels_ghz[-1]) ** spec.power.alpha
        total += spec.power.p_idle_w + spec.power.p_dyn_max_w * utilization * ratio
    return total


def cluster_power_gap(nodes: Sequence[NodeSpec]) -> float:
    """Relative gap between the all-min and all-max cluster power at full load.

    This is the ceiling on achievable savings: no frequency policy can beat
    pinning every node at its lowest level.
    """
    p_max = cluster_power_w(nodes, [n.freq_levels_ghz[-1] for n in nodes])
    p_min = cluster_power_w(nodes, [n.freq_levels_ghz[0] for n in nodes])
    return 1.0 - p_min / p_max


def power_model_for(nodes: Sequence[NodeSpec]):
    """Power objective for the fast-modulation optimizer (full-utilization worst case)."""

    def model(load: float, freqs_ghz: Sequence[float]) -> float:
        del load
        return cluster_power_w(nodes, freqs_ghz)

    return model

"""Rebuild per-request causal paths from an interleaved activity log.

Reconstruction is black box: it never reads ``request_hint``.  SEND/RECEIVE
pairs are matched by message id when both sides carry one, and FIFO per
ordered ``(sender context, receiver context)`` channel otherwise.  A path
starts at a BEGIN on tier 0 and follows same-context program order plus
matched message edges until an END on tier 0 or the log runs out.

Contexts are assumed to serve one request at a time between an arrival and
the matching departure (worker/thread semantics); messages from contexts that
never appear in the log (clients) enter a path without needing a matching
SEND.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .tracelog import Activity, ActivityKind, ActivityLog, CausalPath

_ARRIVALS = (ActivityKind.BEGIN, ActivityKind.RECEIVE)
_DEPARTURES = (ActivityKind.SEND, ActivityKind.END)


@dataclass(slots=True)
class ReconstructionReport:
    """Outcome of reconstructing one log: paths plus bookkeeping counters."""

    paths: list[CausalPath] = field(default_factory=list)
    incomplete_count: int = 0
    unmatched_sends: int = 0
    unmatched_receives: int = 0
    structural_errors: int = 0
    dangling_intervals: int = 0

    @property
    def complete_paths(self) -> list[CausalPath]:
        return [p for p in self.paths if p.complete]


def _match_messages(acts: list[Activity]) -> dict[int, int]:
    """Pair SEND indices with RECEIVE indices; id match first, channel FIFO else."""
    send_for: dict[int, int] = {}
    sends_by_mid: dict[int, int] = {}
    recvs_by_mid: dict[int, int] = {}
    fifo_sends: dict[tuple[str, str], list[int]] = {}
    fifo_recvs: dict[tuple[str, str], list[int]] = {}
    for i, act in enumerate(acts):
        if act.kind is ActivityKind.SEND:
            if act.message_id is not None:
                sends_by_mid.setdefault(act.message_id, i)
            elif act.peer_context is not None:
                fifo_sends.setdefault((act.context, act.peer_context), []).append(i)
        elif act.kind is ActivityKind.RECEIVE:
            if act.message_id is not None:
                recvs_by_mid.setdefault(act.message_id, i)
            elif act.peer_context is not None:
                fifo_recvs.setdefault((act.peer_context, act.context), []).append(i)
    for mid, si in sends_by_mid.items():
        ri = recvs_by_mid.get(mid)
        if ri is not None:
            send_for[si] = ri
    for channel, sends in fifo_sends.items():
        recvs = fifo_recvs.get(channel, [])
        for si, ri in zip(sends, recvs):
            send_for[si] = ri
    return send_for


def _service_intervals(path_acts: list[Activity], tier_count: int) -> tuple[list[int], bool]:
    """Sum maximal [arrival, departure] residency intervals per tier.

    Returns the per-tier totals and whether any arrival was left dangling
    (no departure before the path ended); dangling intervals contribute 0.
    """
    totals = [0] * tier_count
    open_at: dict[int, int] = {}
    for act in path_acts:
        if act.tier >= tier_count:
            continue
        if act.kind in _ARRIVALS:
            if act.tier not in open_at:
                open_at[act.tier] = act.timestamp
        elif act.kind in _DEPARTURES:
            start = open_at.pop(act.tier, None)
            if start is not None:
                totals[act.tier] += act.timestamp - start
    return totals, bool(open_at)


def reconstruct(log: ActivityLog) -> ReconstructionReport:
    """Group a log's activities into causal paths and derive per-path metrics."""
    acts = log.activities
    n = len(acts)
    tier_count = log.tier_count
    report = ReconstructionReport()
    if n == 0:
        return report

    traced = {a.context for a in acts}
    by_context: dict[str, list[int]] = {}
    pos_in_context = [0] * n
    for i, act in enumerate(acts):
        lst = by_context.setdefault(act.context, [])
        pos_in_context[i] = len(lst)
        lst.append(i)
    recv_for_send = _match_messages(acts)

    claimed = bytearray(n)
    next_request_id = 0

    for start in range(n):
        begin = acts[start]
        if begin.kind is not ActivityKind.BEGIN or begin.tier != 0 or claimed[start]:
            continue
        path_indices = [start]
        claimed[start] = 1
        complete = False
        aborted = False
        ctx_list = by_context[begin.context]
        cursor = pos_in_context[start] + 1
        while not aborted:
            if cursor >= len(ctx_list):
                break  # log exhausted in this context
            i = ctx_list[cursor]
            act = acts[i]
            if claimed[i]:
                break  # context handed to another request: truncated path
            claimed[i] = 1
            path_indices.append(i)
            cursor += 1
            if act.kind is ActivityKind.END:
                complete = act.tier == 0
                break
            if act.kind is ActivityKind.RECEIVE:
                if act.peer_context in traced:
                    # Reached linearly, so its SEND was never traversed: the
                    # message has no in-path producer.
                    report.unmatched_receives += 1
                    aborted = True
                continue
            if act.kind is ActivityKind.SEND:
                if act.peer_context not in traced:
                    continue  # reply toward an untraced peer (client)
                ri = recv_for_send.get(i)
                if ri is None or claimed[ri]:
                    report.unmatched_sends += 1
                    break
                recv = acts[ri]
                if recv.timestamp < act.timestamp:
                    report.structural_errors += 1
                    aborted = True
                    continue
                claimed[ri] = 1
                path_indices.append(ri)
                ctx_list = by_context[recv.context]
                cursor = pos_in_context[ri] + 1

        path_acts = [acts[i] for i in path_indices]
        path = CausalPath(activities=path_acts, request_id=next_request_id, complete=complete)
        next_request_id += 1
        for act in path_acts:
            if (
                act.kind is ActivityKind.RECEIVE
                and act.tier == 0
                and act.peer_context not in traced
            ):
                path.first_message_size = act.message_size or 0
                break
        if complete:
            path.server_side_latency = path_acts[-1].timestamp - path_acts[0].timestamp
            totals, dangling = _service_intervals(path_acts, tier_count)
            path.tier_service_time = totals
            if dangling:
                report.dangling_intervals += 1
        else:
            path.tier_service_time = [0] * tier_count
            report.incomplete_count += 1
        report.paths.append(path)

    return report


def server_side_latency(path: CausalPath) -> int:
    """END minus BEGIN timestamp in microseconds; requires a complete path."""
    if not path.complete:
        raise ValueError("incomplete path has no latency")
    return path.activities[-1].timestamp - path.activities[0].timestamp


def tier_service_times(path: CausalPath, tier_count: int) -> list[int]:
    """Per-tier accumulated residency between arrivals and departures."""
    if not path.complete:
        raise ValueError("incomplete path has no tier service times")
    totals, _ = _service_intervals(path.activities, tier_count)
    return totals


def service_time_percentage(path: CausalPath, tier: int) -> float:
    """Share of server-side latency spent on one tier, in [0, 1]."""
    latency = server_side_latency(path)
    if latency <= 0:
        raise ValueError("degenerate path")
    totals, _ = _service_intervals(path.activities, max(tier + 1, len(path.tier_service_time)))
    return totals[tier] / latency

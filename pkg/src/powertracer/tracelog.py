"""Activity events, causal paths, and the on-disk trace log format.

The log format is line oriented, one activity per line, tab separated:

    <timestamp_us>\\t<kind>\\t<tier>\\t<context>\\t<peer_context|->\\t<message_id|->\\t<message_size|->\\t<request_hint|->

Kind tokens are ``BEGIN``, ``END``, ``SEND``, ``RECV``.  Optional fields that
are absent hold the literal ``-``.  Encoding is UTF-8 with LF line endings.
The simulator writes this format and the offline analyzer reads it back; a
parsed log always comes out sorted by timestamp with ties kept in input order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable


class ActivityKind(enum.Enum):
    """The four traced activity types."""

    BEGIN = "BEGIN"
    END = "END"
    SEND = "SEND"
    RECEIVE = "RECV"


_KIND_BY_TOKEN = {k.value: k for k in ActivityKind}

_MESSAGE_KINDS = (ActivityKind.SEND, ActivityKind.RECEIVE)


class ParseError(ValueError):
    """Raised for malformed trace log input; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(slots=True)
class Activity:
    """One timestamped kernel-level event.

    ``peer_context``, ``message_id`` and ``message_size`` are present exactly
    when the kind is SEND or RECEIVE.  ``request_hint`` is the simulator's
    ground-truth request id; it is carried for test oracles only and must not
    be consulted by path reconstruction.
    """

    timestamp: int
    kind: ActivityKind
    tier: int
    context: str
    peer_context: str | None = None
    message_id: int | None = None
    message_size: int | None = None
    request_hint: int | None = None


@dataclass(slots=True)
class ActivityLog:
    """A timestamp-sorted sequence of activities for an M-tier service."""

    activities: list[Activity] = field(default_factory=list)
    tier_count: int = 0


@dataclass(slots=True)
class CausalPath:
    """The ordered activity sequence triggered by one request.

    ``server_side_latency`` is END minus BEGIN timestamp and
    ``tier_service_time`` holds the per-tier accumulated residency, both in
    microseconds.  Paths cut off by a log boundary carry ``complete=False``
    and zeroed metrics.
    """

    activities: list[Activity]
    request_id: int
    first_message_size: int = 0
    server_side_latency: int = 0
    tier_service_time: list[int] = field(default_factory=list)
    complete: bool = False


def _field_or_none(token: str, lineno: int, name: str) -> int | None:
    if token == "-":
        return None
    try:
        value = int(token)
    except ValueError:
        raise ParseError(lineno, f"{name} must be an integer or '-', got {token!r}") from None
    if value < 0:
        raise ParseError(lineno, f"{name} must be non-negative, got {value}")
    return value


def parse_log(data: bytes | str, tier_count: int | None = None) -> ActivityLog:
    """Parse trace log bytes into an :class:`ActivityLog`.

    Malformed lines raise :class:`ParseError` naming the offending line.  The
    result is sorted by timestamp (stable for ties).  ``tier_count`` defaults
    to one past the highest tier index seen.
    """
    if isinstance(data, bytes):
        text = data.decode("utf-8")
    else:
        text = data
    activities: list[Activity] = []
    max_tier = -1
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 8:
            raise ParseError(lineno, f"expected 8 tab-separated fields, got {len(parts)}")
        ts_tok, kind_tok, tier_tok, context, peer_tok, mid_tok, size_tok, hint_tok = parts
        try:
            timestamp = int(ts_tok)
        except ValueError:
            raise ParseError(lineno, f"bad timestamp {ts_tok!r}") from None
        if timestamp < 0:
            raise ParseError(lineno, f"timestamp must be >= 0, got {timestamp}")
        kind = _KIND_BY_TOKEN.get(kind_tok)
        if kind is None:
            raise ParseError(lineno, f"unknown kind token {kind_tok!r}")
        try:
            tier = int(tier_tok)
        except ValueError:
            raise ParseError(lineno, f"bad tier {tier_tok!r}") from None
        if tier < 0:
            raise ParseError(lineno, f"tier must be >= 0, got {tier}")
        if not context or context == "-":
            raise ParseError(lineno, "context must be a non-empty string")
        peer = None if peer_tok == "-" else peer_tok
        message_id = _field_or_none(mid_tok, lineno, "message_id")
        message_size = _field_or_none(size_tok, lineno, "message_size")
        request_hint = _field_or_none(hint_tok, lineno, "request_hint")
        if kind in _MESSAGE_KINDS:
            if peer is None or message_id is None or message_size is None:
                raise ParseError(
                    lineno,
                    f"{kind_tok} requires peer_context, message_id and message_size",
                )
        else:
            if peer is not None or message_id is not None or message_size is not None:
                raise ParseError(
                    lineno,
                    f"{kind_tok} must not carry peer_context, message_id or message_size",
                )
        activities.append(
            Activity(timestamp, kind, tier, context, peer, message_id, message_size, request_hint)
        )
        if tier > max_tier:
            max_tier = tier
    activities.sort(key=lambda a: a.timestamp)  # list.sort is stable: ties keep input order
    if tier_count is None:
        tier_count = max_tier + 1
    return ActivityLog(activities=activities, tier_count=tier_count)


def format_activity(act: Activity) -> str:
    """Render one activity as its canonical log line (no newline)."""
    return "\t".join(
        (
            str(act.timestamp),
            act.kind.value,
            str(act.tier),
            act.context,
            act.peer_context if act.peer_context is not None else "-",
            str(act.message_id) if act.message_id is not None else "-",
            str(act.message_size) if act.message_size is not None else "-",
            str(act.request_hint) if act.request_hint is not None else "-",
        )
    )


def write_log(log: ActivityLog | Iterable[Activity]) -> bytes:
    """Serialize a log to canonical bytes; ``parse_log(write_log(x)) == x``."""
    activities = log.activities if isinstance(log, ActivityLog) else log
    lines = [format_activity(act) for act in activities]
    if not lines:
        return b""
    return ("\n".join(lines) + "\n").encode("utf-8")

"""Built-in cluster and workload definitions.

The default 3-tier cluster mirrors a small heterogeneous blade deployment:
two 2-way front nodes (1.0/1.8/2.0/2.2 GHz) and an 8-way database node
(0.8/1.1/1.6/2.3 GHz).  Power parameters are calibrated so the all-min versus
all-max full-load cluster power gap is 17.68%.

Two transition tables ship as defaults: a read-only browsing mix (7 request
classes, one database call each) and a read-write mix (8 classes, including a
static page served by the front tier alone and classes issuing two database
calls).  Class probabilities and per-tier demand splits were tuned offline so
the read-only mix reproduces the target aggregate service-time shares per
tier (~0.1% / ~17% / ~82%) and its top patterns cover well over 88% of paths.
Each class carries a distinct request message size: that size is the pattern
signal the analyzer clusters on.
"""

from __future__ import annotations

from .sim import NodeSpec, PowerParams, RequestClass, WorkloadSpec

WEB_FREQS_GHZ = (1.0, 1.8, 2.0, 2.2)
DB_FREQS_GHZ = (0.8, 1.1, 1.6, 2.3)

# p_dyn chosen so 1 - P(all-min)/P(all-max) at full utilization = 17.68%.
DEFAULT_NODES = (
    NodeSpec(0, WEB_FREQS_GHZ, server_count=2, power=PowerParams(150.0, 40.0)),
    NodeSpec(1, WEB_FREQS_GHZ, server_count=2, power=PowerParams(150.0, 40.0)),
    NodeSpec(2, DB_FREQS_GHZ, server_count=8, power=PowerParams(200.0, 38.5)),
)

THINK_TIME_US = 7_000_000

# Aggregate demand split across tiers for standard classes.  The database
# dominates; the front tier is nearly free.  (Shares apply to CPU demand;
# measured per-path shares come out slightly lower because network hops and
# queueing enter the denominator.)
_WEB_SHARE = 0.0011
_APP_SHARE = 0.1656
_DB_SHARE = 1.0 - _WEB_SHARE - _APP_SHARE

_WEB_FMAX_MHZ = 2200
_DB_FMAX_MHZ = 2300


def _cycles(t_us: float, f_max_mhz: int) -> int:
    return max(1, round(t_us * f_max_mhz))


def _standard_class(name: str, size: int, total_ms: float, reply: int) -> RequestClass:
    """Request visiting web -> app -> db -> app -> web with one database call."""
    t = total_ms * 1000.0
    web = t * _WEB_SHARE
    app = t * _APP_SHARE
    db = t * _DB_SHARE
    return RequestClass(
        name=name,
        request_size=size,
        hops=(
            (0, _cycles(web * 0.7, _WEB_FMAX_MHZ)),
            (1, _cycles(app * 0.6, _WEB_FMAX_MHZ)),
            (2, _cycles(db, _DB_FMAX_MHZ)),
            (1, _cycles(app * 0.4, _WEB_FMAX_MHZ)),
            (0, _cycles(web * 0.3, _WEB_FMAX_MHZ)),
        ),
        reply_size=reply,
    )


def _two_call_class(name: str, size: int, total_ms: float, reply: int) -> RequestClass:
    """Read-write request issuing two database calls (select then update)."""
    t = total_ms * 1000.0
    web = t * _WEB_SHARE
    app = t * _APP_SHARE
    db = t * _DB_SHARE
    return RequestClass(
        name=name,
        request_size=size,
        hops=(
            (0, _cycles(web * 0.7, _WEB_FMAX_MHZ)),
            (1, _cycles(app * 0.45, _WEB_FMAX_MHZ)),
            (2, _cycles(db * 0.55, _DB_FMAX_MHZ)),
            (1, _cycles(app * 0.35, _WEB_FMAX_MHZ)),
            (2, _cycles(db * 0.45, _DB_FMAX_MHZ)),
            (1, _cycles(app * 0.2, _WEB_FMAX_MHZ)),
            (0, _cycles(web * 0.3, _WEB_FMAX_MHZ)),
        ),
        reply_size=reply,
    )


def _table(fractions: tuple[float, ...], self_bias: float = 0.25) -> tuple[tuple[float, ...], ...]:
    """Row-stochastic table with stationary distribution equal to ``fractions``.

    Rows mix a self-transition bias with the target distribution; the fixed
    point of ``b*I + (1-b)*1*pi`` is exactly ``pi``.
    """
    n = len(fractions)
    return tuple(
        tuple(self_bias * (1.0 if i == j else 0.0) + (1.0 - self_bias) * fractions[j] for j in range(n))
        for i in range(n)
    )


# Read-only browsing mix: class order is descending stationary fraction, so
# pattern id i corresponds to classes[i] in every aligned analysis.
_READ_ONLY_FRACTIONS = (0.26, 0.20, 0.16, 0.12, 0.10, 0.09, 0.07)
_READ_ONLY_CLASSES = (
    _standard_class("home", 310, 12.0, reply=2400),
    _standard_class("browse_categories", 720, 24.0, reply=3600),
    _standard_class("search_items", 1180, 36.0, reply=5200),
    _standard_class("view_item", 1650, 54.0, reply=6800),
    _standard_class("view_user_info", 2210, 72.0, reply=4400),
    _standard_class("view_bid_history", 2840, 63.0, reply=5000),
    _standard_class("browse_regions", 3530, 81.0, reply=7400),
)

_MIXED_FRACTIONS = (0.24, 0.18, 0.14, 0.12, 0.10, 0.09, 0.07, 0.06)
_MIXED_CLASSES = (
    RequestClass("static_page", 240, ((0, _cycles(200.0, _WEB_FMAX_MHZ)),), reply_size=900),
    _standard_class("search_items_rw", 650, 11.0, reply=3000),
    _standard_class("view_item_rw", 1040, 16.0, reply=4200),
    _standard_class("put_bid_auth", 1420, 14.0, reply=2200),
    _two_call_class("store_bid", 1940, 34.0, reply=2600),
    _standard_class("view_user_info_rw", 2470, 27.0, reply=3800),
    _two_call_class("store_comment", 3060, 28.0, reply=2800),
    _standard_class("about_me", 3720, 26.0, reply=5600),
)


def read_only_workload(clients: int, **overrides) -> WorkloadSpec:
    """The browse-only transition table with the given closed-loop population."""
    defaults = dict(
        name="read_only",
        classes=_READ_ONLY_CLASSES,
        transition=_table(_READ_ONLY_FRACTIONS),
        client_count=clients,
        think_time_mean_us=THINK_TIME_US,
    )
    defaults.update(overrides)
    return WorkloadSpec(**defaults)


def read_write_workload(clients: int, **overrides) -> WorkloadSpec:
    """The read-write mixed transition table."""
    defaults = dict(
        name="read_write",
        classes=_MIXED_CLASSES,
        transition=_table(_MIXED_FRACTIONS),
        client_count=clients,
        think_time_mean_us=THINK_TIME_US,
    )
    defaults.update(overrides)
    return WorkloadSpec(**defaults)


WORKLOAD_BUILDERS = {
    "read_only": read_only_workload,
    "read_write": read_write_workload,
}

# Deadlines used by the experiment harness, per workload.
DEADLINES_US = {"read_only": 500_000, "read_write": 200_000}

# Client counts swept in the comparison experiments.
COMPARE_CLIENTS = {
    "read_only": (100, 200, 300, 400, 500),
    "read_write": (500, 600, 700, 800, 900),
}

# Client grids for the ten profiled load levels.
PROFILE_CLIENTS = {
    "read_only": (50, 100, 150, 200, 250, 300, 350, 400, 450, 500),
    "read_write": (90, 180, 270, 360, 450, 540, 630, 720, 810, 900),
}


def nominal_load(clients: int, workload: WorkloadSpec) -> float:
    """Nominal request rate of a closed loop: population over mean think time."""
    return clients / (workload.think_time_mean_us / 1e6)


def pattern_seed_centroids(workload: WorkloadSpec) -> list[float]:
    """Class request sizes in canonical pattern-id order (descending fraction)."""
    return [float(c.request_size) for c in workload.classes]

"""Scenario configuration: cluster, workload, controller and run parameters.

Scenarios come from an INI-style key/value text file (all sections optional;
omitted keys fall back to the built-in defaults), for example::

    [run]
    seed = 42
    deadline_ms = 500

    [workload]
    table = read_only
    clients = 300
    think_time_s = 7.0
    up_ramp_s = 10
    runtime_s = 300
    down_ramp_s = 10

    [cluster]
    network_hop_us = 200

    [node.0]
    freq_ghz = 1.0 1.8 2.0 2.2
    servers = 2
    p_idle_w = 150
    p_dyn_w = 40
    alpha = 3

    [controller]
    name = powertracer
    threshold_factor = 3.0
    patterns = 5
    sampling_period_s = 1.0
    sampling_interval_s = 5.0
    control_period_s = 1.0
    up_factor = 1.2
    lp_factor = 0.8
    ondemand_tick_ms = 80

    [profile]
    clients = 50 100 150 200 250 300 350 400 450 500
    duration_s = 40
    tiers = dominated
    dominated_threshold = 0.5
    r2_gate = 0.97
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass

from .controllers import Schedule
from .sim import NodeSpec, PowerParams, WorkloadSpec
from .workloads import (
    DEADLINES_US,
    DEFAULT_NODES,
    PROFILE_CLIENTS,
    WORKLOAD_BUILDERS,
)

CONTROLLER_NAMES = ("baseline", "powertracer", "powertracer_np", "simpledvs", "ondemand")


class ConfigError(ValueError):
    """Bad scenario configuration."""


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    workload_table: str
    clients: int
    think_time_s: float
    up_ramp_s: float
    runtime_s: float
    down_ramp_s: float
    seed: int
    deadline_us: int
    network_hop_us: int
    duration_s: float | None
    controller: str
    threshold_factor: float
    n_patterns: int
    kmeans_k: int
    schedule: Schedule
    up_factor: float
    lp_factor: float
    ondemand_tick_us: int
    profile_clients: tuple[int, ...]
    profile_duration_s: float
    profile_tiers: str
    dominated_threshold: float
    r2_gate: float

    def workload(self, clients: int | None = None, **overrides) -> WorkloadSpec:
        builder = WORKLOAD_BUILDERS[self.workload_table]
        params = dict(
            think_time_mean_us=round(self.think_time_s * 1e6),
            up_ramp_s=self.up_ramp_s,
            runtime_s=self.runtime_s,
            down_ramp_s=self.down_ramp_s,
        )
        params.update(overrides)
        return builder(clients if clients is not None else self.clients, **params)


def _default_scenario_fields() -> dict:
    return dict(
        nodes=DEFAULT_NODES,
        workload_table="read_only",
        clients=300,
        think_time_s=7.0,
        up_ramp_s=10.0,
        runtime_s=300.0,
        down_ramp_s=10.0,
        seed=0,
        deadline_us=DEADLINES_US["read_only"],
        network_hop_us=200,
        duration_s=None,
        controller="powertracer",
        threshold_factor=3.0,
        n_patterns=5,
        kmeans_k=10,
        schedule=Schedule(),
        up_factor=1.2,
        lp_factor=0.8,
        ondemand_tick_us=80_000,
        profile_clients=PROFILE_CLIENTS["read_only"],
        profile_duration_s=40.0,
        profile_tiers="dominated",
        dominated_threshold=0.5,
        r2_gate=0.97,
    )


def _parse_nodes(cfg: configparser.ConfigParser) -> tuple[NodeSpec, ...]:
    node_sections = sorted(s for s in cfg.sections() if s.startswith("node."))
    if not node_sections:
        return DEFAULT_NODES
    nodes = []
    for section in node_sections:
        tier = int(section.split(".", 1)[1])
        sec = cfg[section]
        freqs = tuple(float(x) for x in sec["freq_ghz"].split())
        nodes.append(
            NodeSpec(
                tier=tier,
                freq_levels_ghz=freqs,
                server_count=sec.getint("servers", 2),
                power=PowerParams(
                    p_idle_w=sec.getfloat("p_idle_w", 150.0),
                    p_dyn_max_w=sec.getfloat("p_dyn_w", 40.0),
                    alpha=sec.getfloat("alpha", 3.0),
                ),
            )
        )
    return tuple(sorted(nodes, key=lambda n: n.tier))


def load_scenario(path: str | None = None, **overrides) -> Scenario:
    """Build a scenario from an optional config file plus keyword overrides."""
    fields = _default_scenario_fields()
    deadline_set = False
    if path is not None:
        cfg = configparser.ConfigParser()
        read = cfg.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path!r}")
        try:
            fields["nodes"] = _parse_nodes(cfg)
            if cfg.has_section("run"):
                run = cfg["run"]
                fields["seed"] = run.getint("seed", fields["seed"])
                if "deadline_ms" in run:
                    fields["deadline_us"] = round(run.getfloat("deadline_ms") * 1000)
                    deadline_set = True
                if "duration_s" in run:
                    fields["duration_s"] = run.getfloat("duration_s")
            if cfg.has_section("workload"):
                wl = cfg["workload"]
                fields["workload_table"] = wl.get("table", fields["workload_table"])
                fields["clients"] = wl.getint("clients", fields["clients"])
                fields["think_time_s"] = wl.getfloat("think_time_s", fields["think_time_s"])
                fields["up_ramp_s"] = wl.getfloat("up_ramp_s", fields["up_ramp_s"])
                fields["runtime_s"] = wl.getfloat("runtime_s", fields["runtime_s"])
                fields["down_ramp_s"] = wl.getfloat("down_ramp_s", fields["down_ramp_s"])
            if cfg.has_section("cluster"):
                fields["network_hop_us"] = cfg["cluster"].getint(
                    "network_hop_us", fields["network_hop_us"]
                )
            if cfg.has_section("controller"):
                ctl = cfg["controller"]
                fields["controller"] = ctl.get("name", fields["controller"])
                fields["threshold_factor"] = ctl.getfloat(
                    "threshold_factor", fields["threshold_factor"]
                )
                fields["n_patterns"] = ctl.getint("patterns", fields["n_patterns"])
                fields["kmeans_k"] = ctl.getint("kmeans_k", fields["kmeans_k"])
                fields["schedule"] = Schedule(
                    round(ctl.getfloat("sampling_period_s", 1.0) * 1e6),
                    round(ctl.getfloat("sampling_interval_s", 5.0) * 1e6),
                    round(ctl.getfloat("control_period_s", 1.0) * 1e6),
                )
                fields["up_factor"] = ctl.getfloat("up_factor", fields["up_factor"])
                fields["lp_factor"] = ctl.getfloat("lp_factor", fields["lp_factor"])
                fields["ondemand_tick_us"] = round(ctl.getfloat("ondemand_tick_ms", 80.0) * 1000)
            if cfg.has_section("profile"):
                prof = cfg["profile"]
                if "clients" in prof:
                    fields["profile_clients"] = tuple(int(x) for x in prof["clients"].split())
                fields["profile_duration_s"] = prof.getfloat(
                    "duration_s", fields["profile_duration_s"]
                )
                fields["profile_tiers"] = prof.get("tiers", fields["profile_tiers"])
                fields["dominated_threshold"] = prof.getfloat(
                    "dominated_threshold", fields["dominated_threshold"]
                )
                fields["r2_gate"] = prof.getfloat("r2_gate", fields["r2_gate"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value in {path!r}: {exc}") from exc

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in fields:
            raise ConfigError(f"unknown scenario field {key!r}")
        fields[key] = value
        if key == "deadline_us":
            deadline_set = True

    table = fields["workload_table"]
    if table not in WORKLOAD_BUILDERS:
        raise ConfigError(
            f"unknown workload table {table!r}; valid: {sorted(WORKLOAD_BUILDERS)}"
        )
    if not deadline_set:
        fields["deadline_us"] = DEADLINES_US[table]
    if path is None and "profile_clients" not in overrides:
        fields["profile_clients"] = PROFILE_CLIENTS[table]
    if fields["controller"] not in CONTROLLER_NAMES:
        raise ConfigError(
            f"unknown controller {fields['controller']!r}; valid: {list(CONTROLLER_NAMES)}"
        )
    return Scenario(**fields)


def with_updates(scenario: Scenario, **changes) -> Scenario:
    return dataclasses.replace(scenario, **changes)

"""Request-tracing-guided DVFS control with a deterministic cluster simulator.

The package splits into the tracing substrate (:mod:`tracelog`,
:mod:`reconstruct`, :mod:`patterns`), the empirical performance model
(:mod:`perfmodel`), the controllers (:mod:`controllers`), the simulator
(:mod:`sim`, :mod:`workloads`) and the experiment front end
(:mod:`scenario`, :mod:`harness`, :mod:`cli`).
"""

from .controllers import (
    ControlDecision,
    ControllerObservation,
    Schedule,
    ThresholdZone,
    ondemand_step,
    powertracer_np_step,
    powertracer_step,
    simpledvs_step,
)
from .patterns import PatternStats, PatternWindow, classify, estimate_load, quantize_load, top_patterns
from .perfmodel import (
    FrequencyVector,
    PerformanceModel,
    ProfilingDataset,
    dominated_tiers,
    fast_modulation,
    fit_model,
    predict_latency,
    run_profiling,
)
from .reconstruct import (
    ReconstructionReport,
    reconstruct,
    server_side_latency,
    service_time_percentage,
    tier_service_times,
)
from .sim import (
    NodeSpec,
    PowerParams,
    RequestClass,
    SimResult,
    Simulation,
    WorkloadSpec,
    baseline_run,
    cluster_power_gap,
    run_sim,
)
from .tracelog import Activity, ActivityKind, ActivityLog, CausalPath, ParseError, parse_log, write_log

__version__ = "0.1.0"

import pytest

from powertracer.sim import baseline_run
from powertracer.workloads import DEFAULT_NODES, read_only_workload


@pytest.fixture(scope="session")
def small_read_only_result():
    """One short seeded baseline run shared by oracle-style tests."""
    wl = read_only_workload(200, up_ramp_s=2.0, runtime_s=15.0, down_ramp_s=1.0)
    return baseline_run(DEFAULT_NODES, wl, seed=20_240_101)


def ground_truth_by_id(result):
    return {r.request_id: r for r in result.requests}


def hints_of(path):
    return {a.request_hint for a in path.activities}

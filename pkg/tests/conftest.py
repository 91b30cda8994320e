import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from afdcost.catalog import Workload, builtin_catalog  # noqa: E402
from afdcost.planner import DeploymentPlan, PlanFlags  # noqa: E402

ALL_OK = PlanFlags(sparsity_ok=True, net_ok=True, stage_ok=True, relies_on_large_ep=False)


def toy_plan(n_micro=3, micro_batch=1, attn=1, ffn=1, gpus=1, tgs=0.0):
    return DeploymentPlan(
        attn_hw="toy", attn_instances=attn, ffn_hw="toy", ffn_instances=ffn, micro_batch=micro_batch,
        n_micro=n_micro, total_batch=micro_batch * n_micro, mode="afd", flags=ALL_OK,
        predicted_tgs=tgs, theoretical_usd_per_1m=None, gpus_per_instance=gpus,
    )


@pytest.fixture(scope="session")
def catalog():
    return builtin_catalog()


@pytest.fixture(scope="session")
def models(catalog):
    return {m.name: m for m in catalog[0]}


@pytest.fixture(scope="session")
def accels(catalog):
    return {a.name: a for a in catalog[1]}


@pytest.fixture(scope="session")
def accel_list(catalog):
    return catalog[1]


@pytest.fixture
def w8k():
    return Workload(avg_ctx=8192)


@pytest.fixture
def w32k():
    return Workload(avg_ctx=32768)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(f"criterion {n:2d}: {results[n]}")

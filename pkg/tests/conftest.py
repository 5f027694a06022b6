import dataclasses

import pytest

from dwdpsim.config import default_config
from dwdpsim.hwmodel import GpuSpec, InterferenceParams
from dwdpsim.modelspec import MoeModelSpec

_CRITERIA = []


@pytest.fixture(scope="session")
def profile():
    return default_config()


@pytest.fixture(scope="session")
def gpu(profile):
    return profile.gpu


@pytest.fixture(scope="session")
def model(profile):
    return profile.model


@pytest.fixture(scope="session")
def interference(profile):
    return profile.interference


@pytest.fixture(scope="session")
def toy_model():
    """Small MoE that keeps event-level runs fast."""
    return MoeModelSpec(num_layers=3, hidden_dim=64, num_experts=8, top_k=2, expert_ffn_dim=32,
                        shared_ffn_dim=16, attn_proj_params=4096, weight_bytes_per_param=1.0,
                        kv_bytes_per_token_per_layer=16, others_bytes_factor=4.0)


@pytest.fixture(scope="session")
def slow_gpu():
    """Rates chosen so toy-model ops last microseconds."""
    return GpuSpec(peak_flops=1e12, mem_bw=1e11, link_bw=2e10, ce_inflight=2)


@pytest.fixture(scope="session")
def no_interference():
    return InterferenceParams.disabled()


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary."""
    def record(number, name, passed, detail=""):
        _CRITERIA.append((number, name, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}: {detail}")


def replace(obj, **kw):
    return dataclasses.replace(obj, **kw)

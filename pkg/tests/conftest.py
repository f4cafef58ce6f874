import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kinres.core.quat import qfrom_rotvec

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_rotvec_quat(rng, max_angle=np.pi):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return qfrom_rotvec(axis * rng.uniform(0, max_angle))


@pytest.fixture(scope="session")
def humanoid():
    from kinres.sim.model import load_model
    return load_model("mini_humanoid")


@pytest.fixture(scope="session")
def pendulum():
    from kinres.sim.model import load_model
    return load_model("pendulum")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def record(request):
    """``record(n, ok, detail)`` prints one acceptance line and keeps it for
    the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance", {})

    def rec(n, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
    return rec


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance")
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from starsr.channel import ChannelSet
from starsr.model import QosSpec, StarCoefficients

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def cgauss(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_channels(rng, n=3, m=4, k=2, q=1, scale=1.0) -> ChannelSet:
    return ChannelSet(cgauss(rng, (k, n), scale), cgauss(rng, (q, n), scale), cgauss(rng, (m, n)),
                      cgauss(rng, (k, m), scale), cgauss(rng, (q, m), scale))


def random_coeffs(rng, m) -> StarCoefficients:
    beta_r = rng.uniform(0, 1, m)
    theta_r = rng.uniform(0, 2 * np.pi, m)
    sign = rng.choice([-1.0, 1.0], m)
    return StarCoefficients.from_polar(beta_r, theta_r, 1 - beta_r, theta_r + sign * np.pi / 2)


def unit_qos(k=2, q=1, rate=1.0, sinr=10.0, L=50, mu=0.01, mu_users=None) -> QosSpec:
    return QosSpec(rate, sinr, L, mu, np.ones(k), np.ones(q), mu_users)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -----------------------------------------------------------

# criterion number -> list of (check, passed, detail)
ACCEPTANCE: dict = {}
_OUTCOMES: dict = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        num = int(report.nodeid.rsplit("test_criterion_", 1)[1].split("_", 1)[0])
        _OUTCOMES[num] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_OUTCOMES):
        verdict = "PASS" if _OUTCOMES[num] == "passed" else "FAIL"
        checks = ACCEPTANCE.get(num, [])
        detail = "; ".join(f"{name}: {'ok' if ok else 'FAILED'} ({info})" for name, ok, info in checks)
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {detail}")

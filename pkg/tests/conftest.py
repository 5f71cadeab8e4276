import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fkspde.model import DomainSpec, HurstParams, Product, ProblemSpec, make_coefficients, make_data

settings.register_profile("fkspde", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fkspde")


def make_spec(lo=(-1.0,), hi=(1.0,), h0=0.8, hs=None, product="stratonovich", drift=None, diffusion=None,
              data=None, horizon=1.0):
    D = DomainSpec.box(list(lo), list(hi))
    hs = hs if hs is not None else (0.8,) * D.d
    return ProblemSpec(D, make_coefficients(drift, diffusion, D.d), HurstParams(h0, tuple(hs)), make_data(data, D),
                       product=Product(product), horizon=horizon)


@pytest.fixture
def bm_spec():
    return make_spec()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)

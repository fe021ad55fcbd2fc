import numpy as np
import pytest

from flatboat import VesselParams
from flatboat.scenario import load_scenario


@pytest.fixture(scope="session")
def params():
    """Model-scale vessel coefficients used throughout the suite."""
    return VesselParams(
        m11=25.8, m22=33.8, m23=6.2, m32=6.2, m33=2.76,
        Xu=12.0, Yv=17.0, Yr=0.2, Nv=0.5, Nr=0.5,
        Xuu=2.5, Yvv=4.5, Nrr=0.1,
    )


@pytest.fixture(scope="session")
def fixture_scenario():
    return load_scenario("ipan-2021")


@pytest.fixture(scope="session")
def solved_plan(fixture_scenario):
    """Energy-optimal plan of the bundled scenario (shared: ~15 s solve)."""
    from flatboat.ocp import plan

    return plan(fixture_scenario.ocp_spec(), fixture_scenario.solver)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20210817)

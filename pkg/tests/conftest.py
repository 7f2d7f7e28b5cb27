import numpy as np
import pytest
from hypothesis import settings

from tacgraph.config import GenConfig
from tacgraph.geometry.mesh import TriangleMesh
from tacgraph.geometry.shapes import box
from tacgraph.scenario import get_mesh

settings.register_profile("tacgraph", max_examples=60, deadline=None, derandomize=True)
settings.load_profile("tacgraph")

NOISELESS = {k: 0.0 for k in ("cloud_m", "delta_trans_m", "delta_rot_rad", "force_n", "torque_nm")}

# criterion lines collected by tests/test_acceptance.py, printed in the summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def unit_cube():
    return TriangleMesh(*box(1.0, 1.0, 1.0), name="unit_cube")


@pytest.fixture(scope="session")
def cube():
    return get_mesh("builtin:cube")


@pytest.fixture(scope="session")
def table():
    return get_mesh("builtin:table")


@pytest.fixture(scope="session")
def wrench():
    return get_mesh("builtin:wrench")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def noiseless_config(**extra):
    d = {"noise": dict(NOISELESS)}
    d.update(extra)
    return GenConfig.model_validate(d)


def truth_values(scenario, upto=None):
    """Ground-truth Values (rest pose plus contacts at t < upto) from a scenario's truth block."""
    from tacgraph.factors import REST_POSE, Values
    from tacgraph.lie import Pose

    vals = Values({REST_POSE: Pose.from_list(scenario.truth["rest_pose"])})
    for c in scenario.truth["contacts"]:
        if upto is None or c["t"] < upto:
            vals = vals.with_contact(c["t"], c["point"], c["force"])
    return vals


def scenario_state(scenario, upto=None, mode="tactile"):
    from tacgraph.factors import FactorGraphState

    obs = scenario.observations if upto is None else scenario.observations[:upto]
    noise = scenario.estimator_config.noise_model.to_model()
    return FactorGraphState(scenario.object, scenario.env, scenario.initial_cloud(mode), scenario.object_points, obs, noise)


@pytest.fixture(scope="session")
def noiseless_cube():
    from tacgraph.scenario import generate_scenario

    cfg = noiseless_config(objects=["cube"])
    return generate_scenario(cfg, cfg.object_list()[0], 0)

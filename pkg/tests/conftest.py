import pytest

from wamlab.envs import TaskSpec
from wamlab.wam import WamSpec

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def reach():
    return TaskSpec("reach-test", "PointReach", {"goal_x": 1.0, "goal_y": 0.0}, horizon=30)


@pytest.fixture
def stall():
    return TaskSpec("stall-test", "StallTrap",
                    {"goal_x": 1.4, "goal_y": 0.0, "stall_x": 0.6, "stall_y": 0.0,
                     "stall_radius": 0.3, "stall_factor": 0.0}, horizon=20)


@pytest.fixture
def push():
    return TaskSpec("push-test", "PushBlock", {"goal_x": 1.2, "goal_y": 0.0}, horizon=55)


@pytest.fixture
def polar():
    return TaskSpec("polar-test", "PointReach", {"polar": 1.0, "goal_x": -1.5}, horizon=30)


@pytest.fixture
def oracle():
    return WamSpec()


@pytest.fixture
def noisy():
    return WamSpec(pred_noise_std=0.05, perturbed_error_gain=3.0, competence=0.7,
                   policy_noise_std=0.1, value_noise_std=0.02)

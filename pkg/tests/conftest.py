import numpy as np
import pytest

from banditpack.arm import CoinSpec, build_coin_arm, build_tabular_arm, deterministic_arm
from banditpack.relaxation import OccupancyTable, RelaxedSolution


def random_tabular_arm(rng, max_states=4, max_actions=3):
    """Random arm with idle action 0, sparse-ish kernel, rewards in [0, 1)."""
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(2, max_actions + 1))
    kernel = rng.random((S, A, S)) * (rng.random((S, A, S)) < 0.7)
    kernel[:, :, 0] += 1e-3
    kernel /= kernel.sum(axis=2, keepdims=True)
    kernel[:, 0, :] = np.eye(S)
    reward = rng.random((S, A))
    reward[:, 0] = 0.0
    return build_tabular_arm(S, A, 0, reward, kernel, int(rng.integers(S)))


def random_coin_arm(rng, T, max_m=2):
    spec = CoinSpec(m=int(rng.integers(1, max_m + 1)), alpha0=float(rng.uniform(0.1, 3.0)),
                    beta0=float(rng.uniform(0.1, 3.0)), reward_scale=float(rng.uniform(0, 2)),
                    horizon=T)
    return build_coin_arm(spec)


def fixed_solution(arms, pull_mass, T):
    """Hand-built solution where arm i pulls with prob pull_mass[i] in its start state."""
    tables = []
    for arm, p in zip(arms, pull_mass):
        v = np.zeros((T, arm.n_states, arm.n_actions))
        v[:, arm.initial, 1] = p
        v[:, arm.initial, arm.idle] = 1 - p
        tables.append(OccupancyTable.from_values(arm, v))
    return RelaxedSolution(tables=tables, lambda_feas=0.0, lambda_infeas=0.0,
                           dual_value=sum(t.expected_reward for t in tables), alpha_blend=1.0,
                           epsilon=1e-9)


@pytest.fixture
def twin_arms():
    return [deterministic_arm(1.0), deterministic_arm(1.0)]


@pytest.fixture
def uniform_coin():
    return build_coin_arm(CoinSpec(m=1, alpha0=1.0, beta0=1.0, reward_scale=1.0, horizon=2))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from banditpack.arm import CoinSpec, build_coin_arm, build_tabular_arm, deterministic_arm
from banditpack.errors import DomainError, InvalidBudget
from banditpack.relaxation import (RelaxedSolution, bisection_bound, dual_value,
                                   pull_schedule_monotonicity_probe, solve_arm_subproblem,
                                   solve_rlp)

from conftest import random_coin_arm, random_tabular_arm


def test_subproblem_pulls_when_price_is_low():
    table, obj = solve_arm_subproblem(deterministic_arm(), 0.5, 1)
    assert obj == pytest.approx(0.5)
    assert table.expected_pulls == pytest.approx(1.0)


def test_subproblem_idles_when_price_is_high():
    table, obj = solve_arm_subproblem(deterministic_arm(), 1.5, 1)
    assert obj == 0.0
    assert table.expected_pulls == 0.0


def test_subproblem_exact_tie_goes_to_idle():
    table, obj = solve_arm_subproblem(deterministic_arm(), 1.0, 3)
    assert obj == 0.0 and table.expected_pulls == 0.0


def test_price_above_max_reward_idles(uniform_coin):
    table, _ = solve_arm_subproblem(uniform_coin, uniform_coin.max_reward + 1e-6, 2)
    assert table.expected_pulls == 0.0
    assert table.values[:, :, 0].sum() == pytest.approx(2.0)


def test_subproblem_rejects_negative_price(uniform_coin):
    with pytest.raises(DomainError):
        solve_arm_subproblem(uniform_coin, -0.1, 2)


def test_uniform_coin_subproblem_by_hand(uniform_coin):
    # lam=0.4: pull at root (0.5 > 0.4); after a success pull again (2/3),
    # after a failure stop (1/3 < 0.4). Objective 0.1 + 0.5 * (2/3 - 0.4).
    table, obj = solve_arm_subproblem(uniform_coin, 0.4, 2)
    assert obj == pytest.approx(0.1 + 0.5 * (2 / 3 - 0.4))
    assert table.expected_pulls == pytest.approx(1.5)
    assert table.expected_reward == pytest.approx(0.5 + 0.5 * 2 / 3)


@pytest.mark.parametrize("lam,expected", [(0.5, 1.5), (2.0, 2.0), (0.0, 2.0), (1.0, 1.0)])
def test_twin_instance_dual(twin_arms, lam, expected):
    # g(lam) = 2 - lam below 1 and lam above 1
    assert dual_value(twin_arms, lam, 1, 1) == pytest.approx(expected)


def test_dual_at_zero_is_unconstrained_optimum(uniform_coin):
    assert dual_value([uniform_coin], 0.0, 1, 2) == pytest.approx(1.0)


def test_monotonicity_probe_twin_instance(twin_arms):
    probe = pull_schedule_monotonicity_probe(twin_arms, 1, 1, [0, 0.5, 2])
    assert [p for _, p in probe] == [2, 2, 0]


def test_monotonicity_probe_zero_reward_arm():
    arm = build_tabular_arm(1, 2, 0, [[0.0, 0.0]], [[[1.0], [1.0]]], 0)
    assert all(p == 0 for _, p in pull_schedule_monotonicity_probe([arm], 1, 4, [0, 1, 3]))


def test_monotonicity_probe_rejects_unsorted(uniform_coin):
    with pytest.raises(DomainError):
        pull_schedule_monotonicity_probe([uniform_coin], 1, 2, [1.0, 0.5])


def test_monotonicity_probe_random_coins():
    rng = np.random.default_rng(3)
    for _ in range(5):
        T = int(rng.integers(2, 8))
        arms = [random_coin_arm(rng, T, max_m=3) for _ in range(4)]
        grid = np.linspace(0, max(a.max_reward for a in arms) * 1.1, 20)
        pulls = [p for _, p in pull_schedule_monotonicity_probe(arms, 1, T, grid)]
        assert all(b <= a + 1e-12 for a, b in zip(pulls, pulls[1:]))


def test_twin_instance_solution(twin_arms):
    sol = solve_rlp(twin_arms, 1, 1, 1e-6)
    assert sol.alpha_blend == pytest.approx(0.5, abs=1e-6)
    assert sol.total_reward == pytest.approx(1.0, abs=2e-6)
    assert sol.total_pulls <= 1 + 1e-9
    assert sol.lambda_infeas <= 1.0 <= sol.lambda_feas
    for tab in sol.tables:
        assert tab.values[0, 0, 1] == pytest.approx(0.5, abs=1e-6)


def test_fast_path_when_budget_is_slack():
    arms = [deterministic_arm(), deterministic_arm()]
    sol = solve_rlp(arms, 2, 3, 1e-3)
    assert sol.fast_path and sol.alpha_blend == 1.0
    assert sol.total_reward == pytest.approx(6.0)
    assert sol.total_pulls == pytest.approx(6.0)
    assert sol.dual_value == pytest.approx(6.0)


def test_three_coins_self_certify():
    rng = np.random.default_rng(11)
    arms = [random_coin_arm(rng, 3) for _ in range(3)]
    eps = 1e-4
    sol = solve_rlp(arms, 1, 3, eps)
    assert sol.total_reward >= sol.dual_value - 2 * eps
    assert sol.total_pulls <= 3 + 1e-9


@pytest.mark.parametrize("k", [0, 3, 1.5])
def test_invalid_budget(twin_arms, k):
    with pytest.raises(InvalidBudget):
        solve_rlp(twin_arms, k, 1, 1e-3)


def test_bisection_iteration_bound():
    rng = np.random.default_rng(5)
    for eps in (1e-2, 1e-6):
        arms = [random_coin_arm(rng, 6) for _ in range(6)]
        sol = solve_rlp(arms, 2, 6, eps)
        r_max = max(a.max_reward for a in arms)
        assert sol.iterations <= bisection_bound(r_max, 2, 6, eps)
        assert sol.lambda_feas - sol.lambda_infeas <= eps / 12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eps=st.sampled_from([1e-2, 1e-5]))
def test_solution_invariants(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    T = int(rng.integers(1, 6))
    arms = [random_tabular_arm(rng) if rng.random() < 0.5 else random_coin_arm(rng, T)
            for _ in range(n)]
    k = int(rng.integers(1, n + 1))
    sol = solve_rlp(arms, k, T, eps)
    assert sol.total_pulls <= k * T + 1e-9
    assert sol.total_reward >= sol.dual_value - 2 * eps
    assert 0.0 <= sol.alpha_blend <= 1.0
    for arm, tab in zip(arms, sol.tables):
        assert np.all(tab.values >= 0)
        assert np.allclose(tab.values.sum(axis=(1, 2)), 1.0, atol=1e-9)
        assert tab.flow_residual(arm) < 1e-9
        assert 0 <= tab.expected_pulls <= T
    # weak duality at arbitrary multipliers
    for lam in (0.0, 0.3, 1.7):
        assert sol.total_reward <= dual_value(arms, lam, k, T) + 1e-9


def test_solution_json_round_trip(twin_arms):
    sol = solve_rlp(twin_arms, 1, 1, 1e-6)
    data = json.loads(json.dumps(sol.to_dict()))
    assert {"lambda_feas", "lambda_infeas", "alpha", "dual_value", "epsilon", "arms"} <= set(data)
    assert set(data["arms"][0]) == {"expected_reward", "expected_pulls", "occupancy"}
    back = RelaxedSolution.from_dict(data, twin_arms)
    assert back.alpha_blend == sol.alpha_blend
    assert np.array_equal(back.tables[1].values, sol.tables[1].values)


def test_stack_sizes_agree():
    # dense and sparse stacked paths must give the same answer
    arms = [build_coin_arm(CoinSpec(2, 0.2 + 0.1 * i, 0.9, 1.0 + 0.1 * i, 9)) for i in range(4)]
    big = solve_rlp(arms, 2, 9, 1e-6)
    small = [solve_arm_subproblem(a, big.lambda_feas, 9)[1] for a in arms]
    assert sum(small) + big.lambda_feas * 18 == pytest.approx(big.g_feas, abs=1e-9)

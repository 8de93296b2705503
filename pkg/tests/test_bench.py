import csv
import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from banditpack.arm import deterministic_arm
from banditpack.bench import (CSV_COLUMNS, GenerativeConfig, beta_cv, beta_params_for_cv,
                              evaluate, generate_instance, preset, run_bench, write_aggregate,
                              write_rows_csv)
from banditpack.errors import DomainError, InfeasibleCV
from banditpack.instance import BanditInstance, twin_instance, tabular_instance


def test_beta_for_uniform_prior():
    assert beta_params_for_cv(1.0, 1 / math.sqrt(3)) == pytest.approx(1.0, abs=1e-12)


def test_beta_self_inverse_point():
    beta = beta_params_for_cv(0.2, 1.0)
    assert beta == pytest.approx(0.2 * 1.2 / 0.8)
    assert beta_cv(0.2, beta) == pytest.approx(1.0, abs=1e-9)


def test_beta_infeasible():
    with pytest.raises(InfeasibleCV):
        beta_params_for_cv(10.0, 2.5)
    with pytest.raises(InfeasibleCV):
        beta_params_for_cv(0.16, 2.5)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(1e-3, 5), cv=st.floats(0.05, 5))
def test_beta_round_trip(alpha, cv):
    if cv * cv * alpha >= 1:
        with pytest.raises(InfeasibleCV):
            beta_params_for_cv(alpha, cv)
        return
    assume(cv * cv * alpha < 1 - 1e-6)  # beta explodes right at the boundary
    beta = beta_params_for_cv(alpha, cv)
    assert beta > 0
    assert beta_cv(alpha, beta) == pytest.approx(cv, rel=1e-9)


def test_config_validation():
    with pytest.raises(DomainError):
        GenerativeConfig(n=10, k=11, T=5, cv=1.0)
    with pytest.raises(DomainError):
        GenerativeConfig(n=10, k=2, T=5, cv=0.0)
    with pytest.raises(DomainError):
        GenerativeConfig(n=5, k=2, T=5, cv=1.0, groups=10)


def test_ten_singleton_groups():
    inst = generate_instance(GenerativeConfig(n=10, k=2, T=4, cv=1.0), 7)
    params = {(s["alpha"], s["beta"], s["reward_scale"]) for s in inst.specs}
    assert len(params) == 10 and inst.n == 10


def test_blocks_of_ten_share_parameters():
    inst = generate_instance(GenerativeConfig(n=100, k=10, T=3, cv=2.5), 1)
    for g in range(10):
        block = inst.specs[10 * g:10 * g + 10]
        assert all(s == block[0] for s in block)
        assert len({id(a) for a in inst.arms[10 * g:10 * g + 10]}) == 1
    for s in inst.specs:
        assert 0.05 <= s["alpha"] < 0.16 and 0 <= s["reward_scale"] <= 2 and s["m"] == 2
        assert beta_cv(s["alpha"], s["beta"]) == pytest.approx(2.5, rel=1e-9)


def test_uneven_groups():
    inst = generate_instance(GenerativeConfig(n=13, k=2, T=3, cv=1.0, groups=4), 0)
    runs = [1]
    for a, b in zip(inst.specs, inst.specs[1:]):
        runs[-1:] = [runs[-1] + 1] if a == b else [runs[-1], 1]
    assert sorted(runs) == [3, 3, 3, 4]


def test_generation_is_deterministic():
    cfg = GenerativeConfig(n=30, k=3, T=5, cv=1.0)
    assert generate_instance(cfg, 5).dumps() == generate_instance(cfg, 5).dumps()
    assert generate_instance(cfg, 5).dumps() != generate_instance(cfg, 6).dumps()


def test_unreachable_cv_for_whole_range():
    with pytest.raises(InfeasibleCV):
        generate_instance(GenerativeConfig(n=10, k=1, T=2, cv=5.0), 0)


def test_instance_file_round_trip(tmp_path):
    inst = generate_instance(GenerativeConfig(n=12, k=3, T=4, cv=1.0), 3)
    inst.save(tmp_path / "i.json")
    back = BanditInstance.load(tmp_path / "i.json")
    assert back.specs == inst.specs and back.horizon == 4 and back.budget_k == 3
    data = json.loads((tmp_path / "i.json").read_text())
    assert set(data["arms"][0]) == {"type", "m", "alpha", "beta", "reward_scale"}


def test_tabular_round_trip(tmp_path):
    inst = twin_instance()
    inst.save(tmp_path / "e.json")
    back = BanditInstance.load(tmp_path / "e.json")
    assert back.arms[0].reward.tolist() == [[0.0, 1.0]]
    assert set(back.specs[0]) == {"type", "states", "actions", "idle", "initial", "reward",
                                  "kernel"}


def test_evaluate_deterministic_no_contention():
    arms = [deterministic_arm(1.0), deterministic_arm(2.0)]
    row = evaluate(tabular_instance(arms, 2, 3), 1e-6, 10)
    assert row.ratio == 1.0 and row.std_err == 0.0 and row.mean_reward == 9.0


def test_evaluate_twin_instance():
    row = evaluate(twin_instance(), 1e-6, 20000, seed=1)
    assert abs(row.mean_reward - 0.75) < 3 * row.std_err
    assert row.dual_bound == pytest.approx(1.0, abs=1e-5)
    assert row.ratio == pytest.approx(row.mean_reward / row.dual_bound)


def test_evaluate_needs_two_trajectories():
    with pytest.raises(DomainError):
        evaluate(twin_instance(), 1e-3, 1)


def test_smoke_bench_outputs(tmp_path):
    reports = [run_bench(c) for c in preset("smoke", trajectories=50)]
    rep = reports[0]
    assert len(rep.per_instance) == 2
    for row in rep.per_instance:
        assert row.violations == 0
        assert row.ratio <= 1 + 3 * row.std_err / row.dual_bound
    assert rep.aggregate_ratio == pytest.approx(np.mean(rep.ratios))
    assert rep.confidence_half_width == pytest.approx(2.326 * np.std(rep.ratios, ddof=1) / math.sqrt(2))
    write_rows_csv(reports, tmp_path / "b.csv")
    write_aggregate(reports, tmp_path / "b.json")
    rows = list(csv.reader((tmp_path / "b.csv").open()))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 3
    agg = json.loads((tmp_path / "b.json").read_text())
    assert agg["rows"][0]["aggregate_ratio"] == pytest.approx(rep.aggregate_ratio)
    # rerun gives the same report
    again = run_bench(preset("smoke", trajectories=50)[0])
    assert [r.mean_reward for r in again.per_instance] == [r.mean_reward for r in rep.per_instance]


def test_presets():
    small = preset("table1-small")
    assert [(c.n, c.k, c.T, c.cv, c.instances, c.trajectories) for c in small] == [
        (100, 10, 25, 1.0, 10, 1000), (100, 10, 25, 2.5, 10, 1000)]
    full = preset("table1")
    assert len(full) == 16 and all(c.instances == 100 and c.trajectories == 3000 for c in full)
    with pytest.raises(DomainError):
        preset("nope")

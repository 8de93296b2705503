"""Generative coin-bandit benchmark.

Arms are split into groups of statistically identical Beta-Binomial coins.
Each group draws a prior shape ``alpha`` uniformly, picks ``beta`` so the
prior has a target coefficient of variation, and draws a reward scale. The
packing heuristic is then scored against the certified dual bound.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, InfeasibleCV
from .instance import BanditInstance, coin_spec_dict
from .packing import simulate
from .relaxation import solve_rlp

Z98 = 2.326
CSV_COLUMNS = ("cv", "n", "k", "T", "instance_seed", "mean_reward", "std_err", "dual_bound", "ratio")


def beta_params_for_cv(alpha: float, cv: float) -> float:
    """Beta shape ``beta`` giving a Beta(alpha, beta) prior with sd/mean == cv.

    From ``cv**2 = beta / (alpha * (alpha + beta + 1))``:
    ``beta = cv**2 * alpha * (alpha + 1) / (1 - cv**2 * alpha)``.

    Raises
    ------
    InfeasibleCV
        When ``cv**2 * alpha >= 1``; no finite positive beta exists then.
    """
    if not (alpha > 0 and cv > 0):
        raise DomainError("alpha and cv must be positive")
    c2a = cv * cv * alpha
    if c2a >= 1.0:
        raise InfeasibleCV(f"cv={cv} unreachable with alpha={alpha} (needs cv^2 * alpha < 1)")
    return c2a * (alpha + 1.0) / (1.0 - c2a)


def beta_cv(alpha: float, beta: float) -> float:
    return math.sqrt(beta / (alpha * (alpha + beta + 1.0)))


@dataclass(frozen=True)
class GenerativeConfig:
    n: int
    k: int
    T: int
    cv: float
    groups: int = 10
    m: int = 2
    alpha_range: tuple[float, float] = (0.05, 0.35)
    reward_range: tuple[float, float] = (0.0, 2.0)
    instances: int = 10
    trajectories: int = 1000
    base_seed: int = 0
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.k <= self.n:
            raise DomainError(f"need 1 <= k <= n, got n={self.n}, k={self.k}")
        if self.T < 1 or self.m < 1:
            raise DomainError("T and m must be positive")
        if not 1 <= self.groups <= self.n:
            raise DomainError(f"groups must lie in [1, n], got {self.groups}")
        if not self.cv > 0:
            raise DomainError("cv must be positive")
        for lo, hi in (self.alpha_range, self.reward_range):
            if not hi > lo:
                raise DomainError("ranges must have positive length")
        if self.alpha_range[0] <= 0:
            raise DomainError("alpha range must be positive")


def _alpha_interval(config: GenerativeConfig) -> tuple[float, float]:
    lo, hi = config.alpha_range
    cap = 1.0 / (config.cv * config.cv)
    if lo >= cap:
        raise InfeasibleCV(f"cv={config.cv} is unreachable for every alpha in {config.alpha_range}")
    # only the part of the interval with cv^2 * alpha < 1 admits a beta
    return lo, min(hi, cap * (1.0 - 1e-9))


def generate_instance(config: GenerativeConfig, seed: int) -> BanditInstance:
    """Draw one instance; the arms of a group share (alpha, beta, reward)."""
    rng = np.random.default_rng(seed)
    a_lo, a_hi = _alpha_interval(config)
    sizes = [len(b) for b in np.array_split(np.arange(config.n), config.groups)]
    specs = []
    for size in sizes:
        alpha = float(rng.uniform(a_lo, a_hi))
        beta = beta_params_for_cv(alpha, config.cv)
        scale = float(rng.uniform(*config.reward_range))
        specs.extend(coin_spec_dict(config.m, alpha, beta, scale) for _ in range(size))
    return BanditInstance(horizon=config.T, budget_k=config.k, specs=specs,
                          meta={"seed": int(seed), "cv": config.cv, "groups": config.groups})


@dataclass
class BenchRow:
    cv: float
    n: int
    k: int
    T: int
    instance_seed: int
    mean_reward: float
    std_err: float
    dual_bound: float
    ratio: float
    violations: int = 0
    solve_seconds: float = 0.0
    simulate_seconds: float = 0.0

    def csv_row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def evaluate(instance: BanditInstance, epsilon: float, trajectories: int, seed: int = 0,
             workers: int = 1) -> BenchRow:
    """Solve the relaxation once and score the heuristic by Monte Carlo."""
    if trajectories < 2:
        raise DomainError("need at least two trajectories")
    k, T = instance.budget_k, instance.horizon
    t0 = time.perf_counter()
    sol = solve_rlp(instance.arms, k, T, epsilon)
    t1 = time.perf_counter()
    summ = simulate(instance.arms, sol, k, T, trajectories, seed=seed, workers=workers)
    t2 = time.perf_counter()
    bound = sol.dual_value
    ratio = summ.mean_reward / bound if bound > 0 else 1.0
    return BenchRow(cv=float(instance.meta.get("cv", float("nan"))), n=instance.n, k=k, T=T,
                    instance_seed=int(instance.meta.get("seed", -1)),
                    mean_reward=summ.mean_reward, std_err=summ.std_err, dual_bound=bound,
                    ratio=ratio, violations=summ.violations,
                    solve_seconds=t1 - t0, simulate_seconds=t2 - t1)


@dataclass
class BenchReport:
    config: GenerativeConfig
    per_instance: list[BenchRow] = field(default_factory=list)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.per_instance])

    @property
    def aggregate_ratio(self) -> float:
        return float(self.ratios.mean())

    @property
    def confidence_half_width(self) -> float:
        r = self.ratios
        if r.size < 2:
            return float("nan")
        return float(Z98 * r.std(ddof=1) / math.sqrt(r.size))

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.per_instance)

    def summary(self) -> dict:
        c = self.config
        return {"n": c.n, "k": c.k, "T": c.T, "cv": c.cv, "instances": len(self.per_instance),
                "trajectories": c.trajectories, "aggregate_ratio": self.aggregate_ratio,
                "ci98_half_width": self.confidence_half_width}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            w.writerows(r.csv_row() for r in self.per_instance)


def instance_seed(config: GenerativeConfig, index: int) -> int:
    return config.base_seed + index


def _evaluate_index(config: GenerativeConfig, index: int) -> BenchRow:
    seed = instance_seed(config, index)
    return evaluate(generate_instance(config, seed), config.epsilon, config.trajectories, seed)


def run_bench(config: GenerativeConfig, workers: int = 1) -> BenchReport:
    """Evaluate ``config.instances`` instances; rows come back in seed order."""
    idx = range(config.instances)
    if workers > 1 and config.instances > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_index, [config] * config.instances, idx))
    else:
        rows = [_evaluate_index(config, i) for i in idx]
    return BenchReport(config=config, per_instance=rows)


_TABLE1_SIZES = [(n, k, T) for n, k in ((500, 50), (500, 100), (100, 10), (100, 20))
                 for T in (25, 40)]

PRESETS: dict[str, list[GenerativeConfig]] = {
    "smoke": [GenerativeConfig(n=20, k=2, T=10, cv=1.0, instances=2, trajectories=200)],
    "table1-small": [GenerativeConfig(n=100, k=10, T=25, cv=cv) for cv in (1.0, 2.5)],
    "table1": [GenerativeConfig(n=n, k=k, T=T, cv=cv, instances=100, trajectories=3000)
               for cv in (1.0, 2.5) for n, k, T in _TABLE1_SIZES],
}


def preset(name: str, **overrides) -> list[GenerativeConfig]:
    try:
        configs = PRESETS[name]
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return [replace(c, **overrides) for c in configs]


def write_aggregate(reports: list[BenchReport], path) -> None:
    rows = [r.summary() for r in reports]
    Path(path).write_text(json.dumps({"rows": rows, "configs": [asdict(r.config) for r in reports]},
                                     indent=1) + "\n")


def write_rows_csv(reports: list[BenchReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for rep in reports:
            w.writerows(r.csv_row() for r in rep.per_instance)

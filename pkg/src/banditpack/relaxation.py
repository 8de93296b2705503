"""Lagrangian solver for the expected-pull-budget relaxation.

Each arm keeps its own dynamics, and the per-step limit of ``k`` pulls is
replaced by a single budget of ``k * T`` pulls in expectation over the
horizon. Pricing each pull at ``lam`` decouples the arms into independent
finite-horizon dynamic programs; bisection on ``lam`` brackets the optimal
multiplier and the two bracket solutions are blended so the budget binds.

All arms are solved together: their states are stacked into one index space
with a block-diagonal sparse kernel, so a sweep over every arm costs one
sparse product per time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .arm import ArmModel
from .errors import DomainError, InvalidBudget

CLAMP = 1e-15
# below this many stacked rows dense products beat sparse ones
DENSE_LIMIT = 256


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    """State-action frequencies of one arm, ``values[t, s, a]``."""

    values: np.ndarray
    idle: int
    expected_reward: float
    expected_pulls: float

    @classmethod
    def from_values(cls, arm: ArmModel, values: np.ndarray) -> "OccupancyTable":
        values = np.asarray(values, dtype=float)
        T = values.shape[0]
        if values.shape[1:] != (arm.n_states, arm.n_actions):
            raise DomainError(f"occupancy shape {values.shape} does not fit the arm")
        reward = float(np.einsum("tsa,sa->", values, arm.reward))
        pulls = float(T - values[:, :, arm.idle].sum())
        return cls(values=values, idle=arm.idle, expected_reward=reward,
                   expected_pulls=min(max(pulls, 0.0), float(T)))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    def policy(self, state: int, t: int) -> np.ndarray:
        """Action distribution at ``(state, t)``; idle when the cell has no mass."""
        w = self.values[t, state]
        total = w.sum()
        if total <= 0:
            out = np.zeros_like(w)
            out[self.idle] = 1.0
            return out
        return w / total

    def flow_residual(self, arm: ArmModel) -> float:
        """Largest violation of the initial condition and flow conservation."""
        S, A = arm.n_states, arm.n_actions
        mass = self.values.sum(axis=2)
        start = np.zeros(S)
        start[arm.initial] = 1.0
        worst = float(np.max(np.abs(mass[0] - start)))
        if self.horizon > 1:
            inflow = self.values[:-1].reshape(self.horizon - 1, S * A) @ arm.kernel
            worst = max(worst, float(np.max(np.abs(mass[1:] - inflow))))
        return worst


@dataclass(frozen=True, eq=False)
class RelaxedSolution:
    """Blended relaxed solution plus the dual certificate that bounds it."""

    tables: list[OccupancyTable]
    lambda_feas: float
    lambda_infeas: float
    dual_value: float
    alpha_blend: float
    epsilon: float
    budget_k: int = 0
    iterations: int = 0
    fast_path: bool = False
    g_feas: float = math.nan
    g_infeas: float = math.nan

    @property
    def expected_rewards(self) -> np.ndarray:
        return np.array([tab.expected_reward for tab in self.tables])

    @property
    def expected_pulls(self) -> np.ndarray:
        return np.array([tab.expected_pulls for tab in self.tables])

    @property
    def total_reward(self) -> float:
        return float(self.expected_rewards.sum())

    @property
    def total_pulls(self) -> float:
        return float(self.expected_pulls.sum())

    def to_dict(self) -> dict:
        return {
            "lambda_feas": self.lambda_feas,
            "lambda_infeas": self.lambda_infeas,
            "alpha": self.alpha_blend,
            "dual_value": self.dual_value,
            "epsilon": self.epsilon,
            "budget_k": self.budget_k,
            "iterations": self.iterations,
            "fast_path": self.fast_path,
            "total_reward": self.total_reward,
            "total_pulls": self.total_pulls,
            "arms": [
                {
                    "expected_reward": tab.expected_reward,
                    "expected_pulls": tab.expected_pulls,
                    "occupancy": tab.values.tolist(),
                }
                for tab in self.tables
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, arms: Sequence[ArmModel]) -> "RelaxedSolution":
        if len(data["arms"]) != len(arms):
            raise DomainError("solution and instance disagree on the number of arms")
        tables = [OccupancyTable.from_values(arm, np.array(entry["occupancy"], dtype=float))
                  for arm, entry in zip(arms, data["arms"])]
        return cls(tables=tables, lambda_feas=float(data["lambda_feas"]),
                   lambda_infeas=float(data["lambda_infeas"]),
                   dual_value=float(data["dual_value"]), alpha_blend=float(data["alpha"]),
                   epsilon=float(data["epsilon"]), budget_k=int(data.get("budget_k", 0)),
                   iterations=int(data.get("iterations", 0)),
                   fast_path=bool(data.get("fast_path", False)))


@dataclass
class _Sweep:
    """Per-arm outcome of one backward induction at a fixed multiplier."""

    lam: float
    objective: np.ndarray
    pulls: np.ndarray
    rewards: np.ndarray
    choice: np.ndarray = field(repr=False)

    @property
    def total_pulls(self) -> float:
        return float(self.pulls.sum())

    def dual(self, budget: float) -> float:
        return self.lam * budget + float(self.objective.sum())


class _ArmStack:
    """Arms laid out in one state index space.

    Each state has ``C + 1`` action columns: column 0 is idle, column ``c``
    is the arm's ``c``-th non-idle action (padded with ``-inf`` reward when
    the arm has fewer). ``P`` maps row ``s * C + (c - 1)`` to next states.
    """

    def __init__(self, arms: Sequence[ArmModel], horizon: int):
        self.arms = list(arms)
        self.horizon = int(horizon)
        sizes = np.array([arm.n_states for arm in self.arms])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.N = int(self.offsets[-1])
        self.C = max((len(arm.pull_actions) for arm in self.arms), default=0)
        self.start = self.offsets[:-1] + np.array([arm.initial for arm in self.arms])
        self.r_max = max((arm.max_reward for arm in self.arms), default=0.0)

        C = self.C
        self.pull_reward = np.full((self.N, C), -np.inf)
        rows, cols, vals = [], [], []
        for i, arm in enumerate(self.arms):
            S, A = arm.n_states, arm.n_actions
            lo = self.offsets[i]
            pulls = np.array(arm.pull_actions, dtype=np.intp)
            if pulls.size == 0:
                continue
            self.pull_reward[lo:lo + S, :pulls.size] = arm.reward[:, pulls]
            # kernel rows (s, a) for every pull action, in stacked (s, c) order
            src = (np.arange(S)[:, None] * A + pulls[None, :]).ravel()
            dst = ((lo + np.arange(S))[:, None] * C + np.arange(pulls.size)[None, :]).ravel()
            indptr = arm.kernel.indptr
            counts = indptr[src + 1] - indptr[src]
            pos = np.repeat(indptr[src] - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
            rows.append(np.repeat(dst, counts))
            cols.append(lo + arm.kernel.indices[pos])
            vals.append(arm.kernel.data[pos])
        self.gain = np.stack([self.pull_reward, np.ones((self.N, C)), self.pull_reward], axis=2)
        if not C:
            return
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
        if self.N * C <= DENSE_LIMIT:
            self.P = np.zeros((self.N * C, self.N))
            self.P[r, c] = v
            self.PT = self.P.T.copy()
        else:
            self.P = sp.csr_array((v, (r, c)), shape=(self.N * C, self.N))
            self.PT = sp.csr_array((v, (c, r)), shape=(self.N, self.N * C))

    def sweep(self, lam: float) -> _Sweep:
        """Backward induction with every pull charged ``lam``.

        Ties go to idle, then to the lowest-index non-idle action.
        """
        N, C, T = self.N, self.C, self.horizon
        choice = np.zeros((T, N), dtype=np.int8)
        togo = np.zeros((N, 3))  # value, pulls-to-go, reward-to-go
        if C:
            rows = np.arange(N)
            gain = self.gain.copy()
            gain[:, :, 0] -= lam
            for t in range(T - 1, -1, -1):
                cand = gain + (self.P @ togo).reshape(N, C, 3)
                if C == 1:
                    best = 0
                    top = cand[:, 0]
                else:
                    best = cand[:, :, 0].argmax(axis=1)
                    top = cand[rows, best]
                pull = top[:, 0] > togo[:, 0]
                choice[t] = pull * (best + 1)
                togo = np.where(pull[:, None], top, togo)
        at_start = togo[self.start]
        return _Sweep(lam=float(lam), objective=at_start[:, 0], pulls=at_start[:, 1],
                      rewards=at_start[:, 2], choice=choice)

    def occupancy(self, choice: np.ndarray) -> np.ndarray:
        """Forward pass: stacked ``(T, N, C + 1)`` occupancy of a deterministic policy."""
        N, C, T = self.N, self.C, self.horizon
        occ = np.zeros((T, N, C + 1))
        d = np.zeros(N)
        d[self.start] = 1.0
        rows = np.arange(N)
        for t in range(T):
            c = choice[t].astype(np.intp)
            occ[t, rows, c] = d
            if C == 0:
                continue
            pulling = c > 0
            w = np.zeros(N * C)
            w[rows[pulling] * C + c[pulling] - 1] = d[pulling]
            d = np.where(pulling, 0.0, d) + self.PT @ w
        return occ

    def split(self, occ: np.ndarray) -> list[OccupancyTable]:
        """Cut a stacked occupancy into per-arm tables in each arm's action order."""
        occ[occ < CLAMP] = 0.0
        tables = []
        for i, arm in enumerate(self.arms):
            lo, hi = self.offsets[i], self.offsets[i + 1]
            values = np.zeros((self.horizon, arm.n_states, arm.n_actions))
            values[:, :, arm.idle] = occ[:, lo:hi, 0]
            for c, a in enumerate(arm.pull_actions):
                values[:, :, a] = occ[:, lo:hi, c + 1]
            mass = values.sum(axis=(1, 2), keepdims=True)
            values /= np.where(mass > 0, mass, 1.0)
            tables.append(OccupancyTable.from_values(arm, values))
        return tables


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam >= 0:
        raise DomainError(f"lambda must be nonnegative, got {lam!r}")
    return lam


def solve_arm_subproblem(arm: ArmModel, lam: float, T: int) -> tuple[OccupancyTable, float]:
    """Maximize ``R(pi) - lam * T(pi)`` for one arm.

    Returns the occupancy table of the optimal deterministic policy and its
    objective value.
    """
    lam = _check_lambda(lam)
    stack = _ArmStack([arm], T)
    sw = stack.sweep(lam)
    return stack.split(stack.occupancy(sw.choice))[0], float(sw.objective[0])


def dual_value(arms: Sequence[ArmModel], lam: float, k: int, T: int) -> float:
    """Dual function ``g(lam) = lam*k*T + sum_i max_pi (R_i - lam*T_i)``."""
    lam = _check_lambda(lam)
    return _ArmStack(arms, T).sweep(lam).dual(k * T)


def pull_schedule_monotonicity_probe(arms: Sequence[ArmModel], k: int, T: int,
                                     lambda_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Total expected pulls of the per-arm optima along a grid of multipliers.

    ``k`` does not enter the sums; it is accepted to mirror the solver call.
    """
    grid = [_check_lambda(x) for x in lambda_grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("lambda grid must be sorted ascending")
    stack = _ArmStack(arms, T)
    return [(lam, stack.sweep(lam).total_pulls) for lam in grid]


def bisection_bound(r_max: float, k: int, T: int, epsilon: float) -> int:
    delta = max(1.0, r_max) * 1e-3
    return math.ceil(math.log2((r_max + delta) * k * T / epsilon)) + 1


def solve_rlp(arms: Sequence[ArmModel], k: int, T: int, epsilon: float) -> RelaxedSolution:
    """Solve the relaxation to within ``2 * epsilon`` of optimal.

    Bisection keeps ``lambda_infeas`` (total expected pulls above ``k*T``)
    and ``lambda_feas`` (within budget) until they are ``epsilon / (k*T)``
    apart, then mixes the two bracket solutions with weight ``alpha`` on the
    infeasible side so the expected pulls meet the budget exactly. When the
    unpriced solution already fits the budget it is returned as is.

    Raises
    ------
    InvalidBudget
        If ``k`` is not in ``[1, len(arms)]``.
    """
    n = len(arms)
    if not (isinstance(k, (int, np.integer)) and 1 <= k <= n):
        raise InvalidBudget(f"budget k={k!r} must satisfy 1 <= k <= n={n}")
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    if int(T) != T or T < 1:
        raise DomainError("horizon must be a positive integer")
    T = int(T)
    budget = k * T
    stack = _ArmStack(arms, T)

    infeas = stack.sweep(0.0)
    if infeas.total_pulls <= budget:
        g0 = infeas.dual(budget)
        occ = stack.occupancy(infeas.choice)
        return RelaxedSolution(tables=stack.split(occ), lambda_feas=0.0, lambda_infeas=0.0,
                               dual_value=g0, alpha_blend=1.0, epsilon=epsilon, budget_k=k,
                               fast_path=True, g_feas=g0, g_infeas=g0)

    delta = max(1.0, stack.r_max) * 1e-3
    feas = stack.sweep(stack.r_max + delta)
    iterations = 0
    while feas.lam - infeas.lam > epsilon / budget:
        mid = stack.sweep(0.5 * (feas.lam + infeas.lam))
        iterations += 1
        if mid.total_pulls > budget:
            infeas = mid
        else:
            feas = mid

    spread = infeas.total_pulls - feas.total_pulls
    alpha = min(1.0, (budget - feas.total_pulls) / spread) if spread > 0 else 0.0
    occ = stack.occupancy(feas.choice)
    occ *= 1.0 - alpha
    occ += alpha * stack.occupancy(infeas.choice)
    g_feas, g_infeas = feas.dual(budget), infeas.dual(budget)
    return RelaxedSolution(tables=stack.split(occ), lambda_feas=feas.lam,
                           lambda_infeas=infeas.lam, dual_value=min(g_feas, g_infeas),
                           alpha_blend=alpha, epsilon=epsilon, budget_k=k,
                           iterations=iterations, g_feas=g_feas, g_infeas=g_infeas)

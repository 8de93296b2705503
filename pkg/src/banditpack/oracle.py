"""Exact references for tiny instances.

``exact_optimal_value`` runs backward induction over the joint state of all
arms with at most ``k`` pulls per step, i.e. the best policy with no
irrevocability restriction. ``exact_pull_count_profile`` tracks, for one arm
under its relaxed policy, the expected reward of the 1st, 2nd, ... pull.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .arm import ArmModel
from .errors import InstanceTooLarge, InvalidBudget
from .relaxation import OccupancyTable

MAX_JOINT_STATES = 10_000
MAX_HORIZON = 6
MAX_ARMS = 3


@dataclass
class JointDP:
    value: list[np.ndarray]
    budget_k: int
    horizon: int
    start: tuple[int, ...] = ()

    @property
    def optimum(self) -> float:
        return float(self.value[0][self.start])


def _joint_actions(arms: Sequence[ArmModel], k: int):
    choices = [(arm.idle,) + arm.pull_actions for arm in arms]
    for combo in itertools.product(*choices):
        if sum(a != arm.idle for a, arm in zip(combo, arms)) <= k:
            yield combo


def solve_joint_dp(arms: Sequence[ArmModel], k: int, T: int, *,
                   max_joint_states: int = MAX_JOINT_STATES, max_horizon: int = MAX_HORIZON,
                   max_arms: int = MAX_ARMS) -> JointDP:
    """Backward induction on the product state space.

    The value array at time ``t`` has one axis per arm. A joint action pulls
    at most ``k`` arms; its expected continuation applies each pulled arm's
    transition matrix along that arm's axis (idle arms stay put).
    """
    n = len(arms)
    if not 1 <= k <= n:
        raise InvalidBudget(f"budget k={k!r} must satisfy 1 <= k <= n={n}")
    joint = math.prod(arm.n_states for arm in arms)
    if n > max_arms or T > max_horizon or joint > max_joint_states:
        raise InstanceTooLarge(
            f"n={n}, T={T}, joint states={joint} exceed caps "
            f"({max_arms}, {max_horizon}, {max_joint_states})")

    shape = tuple(arm.n_states for arm in arms)
    combos = list(_joint_actions(arms, k))
    gains = []
    for combo in combos:
        g = np.zeros(shape)
        for axis, (arm, a) in enumerate(zip(arms, combo)):
            if a != arm.idle:
                view = [1] * n
                view[axis] = arm.n_states
                g = g + arm.reward[:, a].reshape(view)
        gains.append(g)

    values = [np.zeros(shape) for _ in range(T + 1)]
    for t in range(T - 1, -1, -1):
        best = None
        for combo, g in zip(combos, gains):
            cont = values[t + 1]
            for axis, (arm, a) in enumerate(zip(arms, combo)):
                if a != arm.idle:
                    cont = np.moveaxis(np.tensordot(arm.dense_kernel(a), cont, axes=([1], [axis])), 0, axis)
            q = g + cont
            best = q if best is None else np.maximum(best, q)
        values[t] = best
    return JointDP(value=values, budget_k=k, horizon=T,
                   start=tuple(arm.initial for arm in arms))


def exact_optimal_value(arms: Sequence[ArmModel], k: int, T: int, **caps) -> float:
    """Optimal expected reward with at most ``k`` pulls per step.

    Raises
    ------
    InstanceTooLarge
        If the instance exceeds the joint-state, horizon or arm-count caps.
    """
    return solve_joint_dp(arms, k, T, **caps).optimum


@dataclass(frozen=True)
class PullCountProfile:
    """``increments[m - 1]`` is the expected reward collected on the m-th pull."""

    increments: np.ndarray

    @property
    def total(self) -> float:
        return float(self.increments.sum())


def _policy_table(arm: ArmModel, occupancy: OccupancyTable) -> np.ndarray:
    w = occupancy.values
    total = w.sum(axis=2, keepdims=True)
    pol = np.divide(w, total, out=np.zeros_like(w), where=total > 0)
    pol[..., arm.idle] += total[..., 0] <= 0
    return pol


def exact_pull_count_profile(arm: ArmModel, occupancy: OccupancyTable) -> PullCountProfile:
    """Expected reward of each successive pull under the normalized relaxed policy.

    Runs the chain on (state, pulls so far) forward in time; cells without
    occupancy mass idle, exactly as the packing heuristic plays them.
    """
    T = occupancy.horizon
    pol = _policy_table(arm, occupancy)
    dist = np.zeros((arm.n_states, T + 1))
    dist[arm.initial, 0] = 1.0
    inc = np.zeros(T + 1)
    for t in range(T):
        nxt = dist * pol[t, :, arm.idle][:, None]
        for a in arm.pull_actions:
            mass = dist * pol[t, :, a][:, None]
            inc[1:] += arm.reward[:, a] @ mass[:, :-1]
            moved = arm.dense_kernel(a).T @ mass
            nxt[:, 1:] += moved[:, :-1]
        dist = nxt
    return PullCountProfile(increments=inc[1:])


def check_decreasing_returns(profile: PullCountProfile, tol: float = 1e-9) -> bool:
    inc = np.asarray(profile.increments)
    return bool(np.all(inc[1:] <= inc[:-1] + tol))

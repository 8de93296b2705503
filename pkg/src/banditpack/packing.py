"""The irrevocable packing heuristic and its Monte Carlo harness.

Arms are ranked once by expected reward per expected pull under the relaxed
solution. The top ``k`` start active. Each active arm replays its relaxed
policy on a private "local" clock: when the policy idles the arm, the local
clock advances without consuming global time, and an arm whose local clock
runs out is discarded for good and replaced by the next ranked arm.

Randomness
----------
A trajectory consumes a block of uniforms shaped ``(2, n, T)``:
``block[0, i, l]`` draws arm ``i``'s action at local time ``l`` and
``block[1, i, l]`` draws the next state when that action is a pull. Each
slot is used at most once, so the draws are independent. Trajectory ``j``
of a run seeded with ``seed`` reads the Philox4x64 stream keyed by ``seed``
starting at counter ``j * ceil(2 n T / 4)``; any trajectory can be replayed
alone and batches are bit-identical to one-at-a-time generation.
"""

from __future__ import annotations

import bisect
import csv
import math
import weakref
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .arm import ArmModel
from .relaxation import OccupancyTable, RelaxedSolution

ZERO_PULLS = 1e-12
LOG_COLUMNS = ("t", "arm", "action", "state_before", "state_after", "reward")


@dataclass(frozen=True)
class ArmRanking:
    order: tuple[int, ...]
    ratios: tuple[float, ...]
    dropped: tuple[int, ...]


def rank_arms(solution: RelaxedSolution) -> ArmRanking:
    """Order arms by decreasing ``E[R_i] / E[T_i]``, ties by index.

    Arms the relaxed solution never pulls are set aside in ``dropped``.
    """
    ratios, kept, dropped = [], [], []
    for i, tab in enumerate(solution.tables):
        if tab.expected_pulls <= ZERO_PULLS:
            dropped.append(i)
            ratios.append(math.nan)
        else:
            kept.append(i)
            ratios.append(tab.expected_reward / tab.expected_pulls)
    order = sorted(kept, key=lambda i: (-ratios[i], i))
    return ArmRanking(order=tuple(order), ratios=tuple(ratios), dropped=tuple(dropped))


def _pick(cum, u: float) -> int:
    # first index whose cumulative weight exceeds u * total
    target = u * cum[-1]
    for a in range(len(cum) - 1):
        if target < cum[a]:
            return a
    return len(cum) - 1


def sample_local_action(arm: ArmModel, occupancy: OccupancyTable, state: int,
                        local_time: int, rng) -> int:
    """Draw an action in proportion to ``occupancy[local_time, state, :]``.

    Cells without mass return the idle action. ``rng`` is a numpy Generator
    or a uniform number in ``[0, 1)``.
    """
    u = float(rng) if isinstance(rng, (float, np.floating)) else rng.random()
    w = occupancy.values[local_time, state]
    if w.sum() <= 0:
        return arm.idle
    return _pick(np.cumsum(w), u)


class _Transitions:
    """Row-wise cumulative kernel as plain lists for fast scalar sampling."""

    def __init__(self, arm: ArmModel):
        K = arm.kernel
        self.indptr = K.indptr.tolist()
        self.indices = K.indices.tolist()
        starts = np.repeat(K.indptr[:-1], np.diff(K.indptr))
        csum = np.cumsum(K.data)
        self.cum = (csum - np.concatenate([[0.0], csum])[starts]).tolist()
        self.n_actions = arm.n_actions

    def sample(self, s: int, a: int, u: float) -> int:
        r = s * self.n_actions + a
        lo, hi = self.indptr[r], self.indptr[r + 1]
        j = bisect.bisect_right(self.cum, u * self.cum[hi - 1], lo, hi)
        return self.indices[min(j, hi - 1)]


_TRANSITIONS: "weakref.WeakKeyDictionary[ArmModel, _Transitions]" = weakref.WeakKeyDictionary()


def _transitions(arm: ArmModel) -> _Transitions:
    tr = _TRANSITIONS.get(arm)
    if tr is None:
        tr = _TRANSITIONS[arm] = _Transitions(arm)
    return tr


class _Policy:
    """Normalized cumulative action tables for every arm, plus the ranking."""

    def __init__(self, arms: Sequence[ArmModel], solution: RelaxedSolution):
        if len(arms) != len(solution.tables):
            raise ValueError("solution and arms disagree on the number of arms")
        self.arms = list(arms)
        self.ranking = rank_arms(solution)
        self.cum = []
        for arm, tab in zip(arms, solution.tables):
            w = tab.values
            total = w.sum(axis=2, keepdims=True)
            probs = np.where(total > 0, w / np.where(total > 0, total, 1.0), 0.0)
            probs[..., arm.idle] += (total[..., 0] <= 0)
            self.cum.append(np.cumsum(probs, axis=2))
        self.transitions = [_transitions(arm) for arm in arms]
        self.rewards = [arm.reward for arm in arms]
        self.idle = [arm.idle for arm in arms]
        self.initial = [arm.initial for arm in arms]


@dataclass
class PackingRun:
    """One trajectory of the packing heuristic.

    ``pull_log[t]`` lists the arms pulled at global step ``t``;
    ``discard_time[i]`` is the step during whose selection phase arm ``i``
    was discarded; ``activations`` holds ``(t, arm)`` for every arm brought
    in to replace a discarded one.
    """

    n_arms: int
    k: int
    horizon: int
    initial: tuple[int, ...]
    active: list[int]
    available: list[int]
    discarded: list[int]
    local_time: list[int]
    current_state: list[int]
    pending_action: list[int | None]
    total_reward: float = 0.0
    pull_log: list[tuple[int, ...]] = field(default_factory=list)
    discard_time: dict[int, int] = field(default_factory=dict)
    activations: list[tuple[int, int]] = field(default_factory=list)
    events: list[tuple] | None = None

    @property
    def n_discards(self) -> int:
        return len(self.discarded)

    @property
    def n_replacements(self) -> int:
        """Discards that brought a fresh arm into play."""
        return len(self.activations)

    @property
    def max_pulls_per_step(self) -> int:
        return max((len(p) for p in self.pull_log), default=0)


def _play(policy: _Policy, k: int, T: int, block: np.ndarray, record: bool = False) -> PackingRun:
    n = len(policy.arms)
    order = policy.ranking.order
    u_act, u_next = block[0].tolist(), block[1].tolist()
    cum, trans, rewards, idle = policy.cum, policy.transitions, policy.rewards, policy.idle

    active = list(order[:k])
    available = deque(order[k:])
    run = PackingRun(n_arms=n, k=k, horizon=T, initial=tuple(active), active=active,
                     available=[], discarded=[], local_time=[0] * n,
                     current_state=list(policy.initial), pending_action=[None] * n,
                     events=[] if record else None)
    l, s, pending = run.local_time, run.current_state, run.pending_action
    slot = [0] * n
    total = 0.0
    for t in range(T):
        pos = 0
        while pos < len(active):
            i = active[pos]
            if pending[i] is not None:
                pos += 1
                continue
            a = idle[i]
            while a == idle[i] and l[i] < T:
                a = _pick(cum[i][l[i], s[i]], u_act[i][l[i]])
                slot[i] = l[i]
                l[i] += 1
            if a == idle[i]:
                active.pop(pos)
                run.discarded.append(i)
                run.discard_time[i] = t
                if available:
                    j = available.popleft()
                    active.append(j)
                    run.activations.append((t, j))
                continue
            pending[i] = a
            pos += 1

        for i in active:
            a, before = pending[i], s[i]
            r = float(rewards[i][before, a])
            s[i] = trans[i].sample(before, a, u_next[i][slot[i]])
            total += r
            pending[i] = None
            if record:
                run.events.append((t, i, a, before, s[i], r))
        run.pull_log.append(tuple(active))

    run.total_reward = total
    run.available = list(available)
    return run


def _block_width(n: int, T: int) -> int:
    return -(-2 * n * T // 4)


def trajectory_uniforms(seed: int, n: int, T: int, start: int, count: int) -> np.ndarray:
    """Uniform blocks for trajectories ``start .. start + count - 1``."""
    width = _block_width(n, T)
    gen = np.random.Generator(np.random.Philox(key=int(seed), counter=start * width))
    raw = gen.random((count, 4 * width))
    return raw[:, :2 * n * T].reshape(count, 2, n, T)


def run_packing(arms: Sequence[ArmModel], solution: RelaxedSolution, k: int, T: int,
                rng=None, record: bool = False) -> PackingRun:
    """Play one trajectory of the packing heuristic.

    ``rng`` may be a numpy Generator, an explicit ``(2, n, T)`` uniform
    block, or ``None`` (trajectory 0 of seed 0).
    """
    n = len(arms)
    if rng is None:
        block = trajectory_uniforms(0, n, T, 0, 1)[0]
    elif isinstance(rng, np.random.Generator):
        block = rng.random((2, n, T))
    else:
        block = np.asarray(rng, dtype=float)
        if block.shape != (2, n, T):
            raise ValueError(f"uniform block must have shape {(2, n, T)}")
    return _play(_Policy(arms, solution), k, T, block, record)


def verify_irrevocability(run: PackingRun) -> bool:
    """Check that no arm is ever pulled again once it stops being pulled.

    Every arm's pull times must form one unbroken stretch; an arm that stops
    before the horizon must have been discarded at that step; nothing is
    pulled or activated after its discard; and at most ``n - k`` arms are
    brought in beyond the initial ones.
    """
    T = len(run.pull_log)
    times: dict[int, list[int]] = {}
    for t, pulled in enumerate(run.pull_log):
        for i in pulled:
            times.setdefault(i, []).append(t)
    entered = {i: 0 for i in run.initial}
    for t, i in run.activations:
        if i in entered:
            return False
        entered[i] = t
    if len(run.activations) > run.n_arms - run.k:
        return False
    for i, ts in times.items():
        if i not in entered or ts[0] < entered[i]:
            return False
        if ts != list(range(ts[0], ts[-1] + 1)):
            return False
        gone = run.discard_time.get(i)
        if gone is not None and ts[-1] >= gone:
            return False
        if ts[-1] < T - 1 and gone != ts[-1] + 1:
            return False
    return all(i in entered and entered[i] <= t for i, t in run.discard_time.items())


@dataclass
class SimulationSummary:
    trajectories: int
    mean_reward: float
    std_err: float
    discards_mean: float
    violations: int = 0
    rewards: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"trajectories": self.trajectories, "mean_reward": self.mean_reward,
                "std_err": self.std_err, "discards_mean": self.discards_mean}


def run_violations(run: PackingRun) -> int:
    """Count breaches of irrevocability, the per-step cap and the swap cap.

    The swap cap bounds discards that trigger a replacement by ``n - k``.
    Discards after the available pool is empty retire an arm without a
    swap; there can be at most ``k`` of those, so they are capped separately.
    """
    bad = 0 if verify_irrevocability(run) else 1
    bad += run.max_pulls_per_step > run.k
    bad += run.n_replacements > run.n_arms - run.k
    bad += run.n_discards - run.n_replacements > run.k
    return bad


def _simulate_chunk(arms, solution, k, T, seed, start, count, verify):
    policy = _Policy(arms, solution)
    blocks = trajectory_uniforms(seed, len(arms), T, start, count)
    rewards = np.empty(count)
    discards = np.empty(count)
    violations = 0
    for j in range(count):
        run = _play(policy, k, T, blocks[j])
        rewards[j] = run.total_reward
        discards[j] = run.n_discards
        if verify:
            violations += run_violations(run)
    return rewards, discards, violations


def simulate(arms: Sequence[ArmModel], solution: RelaxedSolution, k: int, T: int,
             trajectories: int, seed: int = 0, workers: int = 1, verify: bool = True,
             log_path=None, chunk: int = 2000) -> SimulationSummary:
    """Monte Carlo estimate of the heuristic's expected reward.

    Trajectories are cut into contiguous chunks; with ``workers > 1`` the
    chunks run in separate processes. Results do not depend on ``workers``.
    ``log_path`` receives the per-step CSV of trajectory 0.
    """
    if trajectories < 2:
        raise ValueError("need at least two trajectories")
    spans = [(a, min(chunk, trajectories - a)) for a in range(0, trajectories, chunk)]
    args = [(arms, solution, k, T, seed, a, c, verify) for a, c in spans]
    if workers > 1 and len(spans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_simulate_chunk, *zip(*args)))
    else:
        parts = [_simulate_chunk(*a) for a in args]
    rewards = np.concatenate([p[0] for p in parts])
    discards = np.concatenate([p[1] for p in parts])

    if log_path is not None:
        block = trajectory_uniforms(seed, len(arms), T, 0, 1)[0]
        run = _play(_Policy(arms, solution), k, T, block, record=True)
        write_trajectory_log(run, log_path)

    return SimulationSummary(trajectories=trajectories, mean_reward=float(rewards.mean()),
                             std_err=float(rewards.std(ddof=1) / math.sqrt(trajectories)),
                             discards_mean=float(discards.mean()),
                             violations=sum(p[2] for p in parts), rewards=rewards)


def write_trajectory_log(run: PackingRun, path) -> None:
    if run.events is None:
        raise ValueError("run was not recorded")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(run.events)

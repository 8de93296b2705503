"""Single-arm MDP model and Beta-Binomial coin arms.

An arm is a finite-horizon tabular MDP with one distinguished idle action:
idling earns nothing and leaves the state unchanged. Kernels are stored as a
sparse ``(S * A, S)`` matrix whose row ``s * A + a`` is the distribution of
the next state after taking action ``a`` in state ``s``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import DomainError, NegativeReward, NonStochasticRow

log = logging.getLogger(__name__)

ROW_TOL = 1e-9

COIN_IDLE = 0
COIN_PULL = 1


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Immutable tabular arm.

    Parameters
    ----------
    reward : ndarray, shape (S, A)
        Nonnegative one-step rewards.
    kernel : scipy.sparse.csr_array, shape (S * A, S)
        Transition rows, indexed ``s * A + a``.
    idle : int
        Index of the idle action.
    initial : int
        Index of the (degenerate) starting state.
    state_labels : tuple, optional
        Opaque identifiers for the states, same order as the indices.
    canonicalized : bool
        True when the caller's idle rows were overwritten at construction.
    """

    reward: np.ndarray
    kernel: sp.csr_array
    idle: int
    initial: int
    state_labels: tuple | None = None
    canonicalized: bool = False
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def pull_actions(self) -> tuple[int, ...]:
        return tuple(a for a in range(self.n_actions) if a != self.idle)

    @property
    def max_reward(self) -> float:
        return float(self.reward.max()) if self.reward.size else 0.0

    def row(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of the next state from ``(s, a)``."""
        r = s * self.n_actions + a
        lo, hi = self.kernel.indptr[r], self.kernel.indptr[r + 1]
        return self.kernel.indices[lo:hi], self.kernel.data[lo:hi]

    def dense_kernel(self, a: int) -> np.ndarray:
        """Dense ``(S, S)`` transition matrix of action ``a`` (cached)."""
        if a not in self._dense:
            rows = np.arange(self.n_states) * self.n_actions + a
            self._dense[a] = self.kernel[rows].toarray()
        return self._dense[a]


def _as_labels(spec, what: str) -> tuple:
    if isinstance(spec, (int, np.integer)):
        if spec < 1:
            raise DomainError(f"need at least one {what}")
        return tuple(range(int(spec)))
    labels = tuple(spec)
    if not labels:
        raise DomainError(f"need at least one {what}")
    return labels


def build_tabular_arm(states, actions, idle_index: int, reward, kernel,
                      initial_state: int) -> ArmModel:
    """Validate raw arrays and build an :class:`ArmModel`.

    ``states`` and ``actions`` are either counts or sequences of labels.
    ``kernel`` is a dense ``(S, A, S)`` array-like or a sparse ``(S*A, S)``
    matrix. Idle rows that do not already encode "zero reward, stay put" are
    overwritten, and the returned arm has ``canonicalized=True``.

    Raises
    ------
    NonStochasticRow
        If a kernel row has a negative entry or its sum is off by more than 1e-9.
    NegativeReward
        If any reward is negative.
    """
    state_labels = _as_labels(states, "state")
    S = len(state_labels)
    A = len(_as_labels(actions, "action"))
    if not 0 <= idle_index < A:
        raise DomainError(f"idle index {idle_index} out of range for {A} actions")
    if not 0 <= initial_state < S:
        raise DomainError(f"initial state {initial_state} out of range for {S} states")

    reward = np.array(reward, dtype=float)
    if reward.shape != (S, A):
        raise DomainError(f"reward has shape {reward.shape}, expected {(S, A)}")
    if not np.all(np.isfinite(reward)):
        raise DomainError("rewards must be finite")

    if sp.issparse(kernel):
        K = sp.csr_array(kernel, dtype=float)
        if K.shape != (S * A, S):
            raise DomainError(f"kernel has shape {K.shape}, expected {(S * A, S)}")
    else:
        dense = np.asarray(kernel, dtype=float)
        if dense.shape != (S, A, S):
            raise DomainError(f"kernel has shape {dense.shape}, expected {(S, A, S)}")
        K = sp.csr_array(dense.reshape(S * A, S))
    K.eliminate_zeros()
    K.sort_indices()

    if np.any(K.data < 0):
        raise NonStochasticRow("kernel has negative entries")
    sums = np.asarray(K.sum(axis=1)).ravel()
    not_idle = np.ones(S * A, dtype=bool)
    not_idle[idle_index::A] = False
    bad = np.flatnonzero(not_idle & (np.abs(sums - 1.0) > ROW_TOL))
    if bad.size:
        s, a = divmod(int(bad[0]), A)
        raise NonStochasticRow(f"kernel row (state {s}, action {a}) sums to {sums[bad[0]]!r}")
    if np.any(reward < 0):
        raise NegativeReward("rewards must be nonnegative")

    # canonical idle semantics: zero reward, point mass on the current state
    idle_rows = np.arange(S) * A + idle_index
    sub = K[idle_rows].toarray()
    canonical = np.array_equal(sub, np.eye(S)) and not np.any(reward[:, idle_index])
    if not canonical:
        log.warning("idle action rows overwritten with canonical self-loops")
        reward[:, idle_index] = 0.0
        K = K.tolil()
        for s in range(S):
            K[s * A + idle_index] = 0.0
            K[s * A + idle_index, s] = 1.0
        K = sp.csr_array(K)
        K.eliminate_zeros()
        K.sort_indices()
        sums = np.asarray(K.sum(axis=1)).ravel()

    # tighten rows that are within tolerance but not exact
    K.data /= np.repeat(sums, np.diff(K.indptr))
    return _freeze(ArmModel(reward=reward, kernel=K, idle=idle_index, initial=initial_state,
                            state_labels=state_labels, canonicalized=not canonical))


def _freeze(arm: ArmModel) -> ArmModel:
    for arr in (arm.reward, arm.kernel.data, arm.kernel.indices, arm.kernel.indptr):
        arr.setflags(write=False)
    return arm


def coin_predictive(alpha, beta, m: int, j):
    """Beta-Binomial probability of ``j`` successes in ``m`` trials.

    Evaluated as ``C(m, j) B(alpha + j, beta + m - j) / B(alpha, beta)`` in
    log space. ``j`` may be an array.

    The Beta ratio equals ``(alpha)_j (beta)_{m-j} / (alpha + beta)_m`` with
    rising factorials; summing their logs term by term avoids the
    cancellation that a difference of two ``betaln`` calls suffers once
    ``alpha + beta`` is large.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(alpha <= 0) or np.any(beta <= 0):
        raise DomainError("alpha and beta must be positive")
    if m < 0:
        raise DomainError("m must be nonnegative")
    j = np.asarray(j)
    if np.any(j < 0) or np.any(j > m):
        raise DomainError(f"j must lie in [0, {m}]")
    log_choose = gammaln(m + 1) - gammaln(j + 1) - gammaln(m - j + 1)
    alpha, beta, j = np.broadcast_arrays(alpha, beta, j)
    steps = np.arange(m)
    # cumulative log rising factorials, index i holds log (x)_i
    def rising(x):
        terms = np.log(x[..., None] + steps)
        return np.concatenate([np.zeros(x.shape + (1,)), np.cumsum(terms, axis=-1)], axis=-1)

    ji = j.astype(int)[..., None]
    log_ratio = (np.take_along_axis(rising(alpha), ji, -1)[..., 0]
                 + np.take_along_axis(rising(beta), m - ji, -1)[..., 0]
                 - rising(alpha + beta)[..., m])
    out = np.exp(log_choose + log_ratio)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CoinSpec:
    """Binomial(m, p) coin with a Beta(alpha0, beta0) prior on p."""

    m: int
    alpha0: float
    beta0: float
    reward_scale: float
    horizon: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"m must be a positive integer, got {self.m!r}")
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise DomainError("prior pseudo-counts must be positive")
        if not self.reward_scale >= 0:
            raise DomainError("reward_scale must be nonnegative")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise DomainError(f"horizon must be a positive integer, got {self.horizon!r}")


def coin_state_count(m: int, horizon: int) -> int:
    return (horizon + 1) + m * horizon * (horizon + 1) // 2


def build_coin_arm(spec: CoinSpec) -> ArmModel:
    """Enumerate the reachable posterior lattice of a coin arm.

    States are ``(depth, successes)`` for ``depth = 0..horizon`` pulls and
    ``successes = 0..m * depth``; the posterior at a state is
    ``(alpha0 + successes, beta0 + m * depth - successes)``. Depth-``horizon``
    states are absorbing under the pull action. Action 0 is idle, action 1
    pulls. Arms are memoized on the spec, so equal specs share one object.
    """
    return _build_coin_arm(spec)


@functools.lru_cache(maxsize=256)
def _build_coin_arm(spec: CoinSpec) -> ArmModel:
    m, T = int(spec.m), int(spec.horizon)
    offsets = np.concatenate([[0], np.cumsum([m * d + 1 for d in range(T + 1)])])
    S = int(offsets[-1])
    depth = np.repeat(np.arange(T + 1), [m * d + 1 for d in range(T + 1)])
    succ = np.arange(S) - offsets[depth]
    a = spec.alpha0 + succ
    b = spec.beta0 + m * depth - succ

    reward = np.zeros((S, 2))
    reward[:, COIN_PULL] = spec.reward_scale * m * a / (a + b)

    rows, cols, vals = [np.arange(S) * 2 + COIN_IDLE], [np.arange(S)], [np.ones(S)]
    inner = np.flatnonzero(depth < T)
    x = np.arange(m + 1)
    probs = coin_predictive(a[inner, None], b[inner, None], m, x[None, :])
    probs /= probs.sum(axis=1, keepdims=True)
    rows.append(np.repeat(inner * 2 + COIN_PULL, m + 1))
    cols.append((offsets[depth[inner] + 1][:, None] + succ[inner, None] + x[None, :]).ravel())
    vals.append(probs.ravel())
    leaves = np.flatnonzero(depth == T)
    rows.append(leaves * 2 + COIN_PULL)
    cols.append(leaves)
    vals.append(np.ones(leaves.size))

    K = sp.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                     shape=(2 * S, S))
    K.sort_indices()
    labels = tuple(zip(depth.tolist(), succ.tolist()))
    return _freeze(ArmModel(reward=reward, kernel=K, idle=COIN_IDLE, initial=0,
                            state_labels=labels))


def martingale_gap(arm: ArmModel, action: int = COIN_PULL) -> float:
    """Largest ``|r(s, a) - E[r(s', a)]|`` over states, for one pull action."""
    r = arm.reward[:, action]
    return float(np.max(np.abs(r - arm.dense_kernel(action) @ r))) if arm.n_states else 0.0


def deterministic_arm(reward: float = 1.0) -> ArmModel:
    """One state, actions ``(idle, pull)``, pulling pays ``reward`` and stays put."""
    return build_tabular_arm(1, 2, 0, [[0.0, reward]], [[[1.0], [1.0]]], 0)


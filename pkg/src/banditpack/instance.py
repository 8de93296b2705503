"""Bandit instances and their JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arm import ArmModel, CoinSpec, build_coin_arm, build_tabular_arm
from .errors import DomainError


@dataclass
class BanditInstance:
    """Arms plus horizon and per-step budget.

    ``specs`` keeps the serializable description of each arm (the dicts
    written to disk); ``arms`` holds the built models in the same order.
    """

    horizon: int
    budget_k: int
    specs: list[dict]
    arms: list[ArmModel] = field(default_factory=list, repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.arms:
            self.arms = [arm_from_spec(s, self.horizon) for s in self.specs]

    @property
    def n(self) -> int:
        return len(self.arms)

    def to_dict(self) -> dict:
        out = {"horizon": self.horizon, "budget_k": self.budget_k, "arms": self.specs}
        if self.meta:
            out["meta"] = self.meta
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "BanditInstance":
        try:
            T, k, specs = int(data["horizon"]), int(data["budget_k"]), list(data["arms"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DomainError(f"malformed instance: {exc}") from exc
        return cls(horizon=T, budget_k=k, specs=specs, meta=dict(data.get("meta", {})))

    @classmethod
    def load(cls, path) -> "BanditInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def coin_spec_dict(m: int, alpha: float, beta: float, reward_scale: float) -> dict:
    return {"type": "coin", "m": int(m), "alpha": float(alpha), "beta": float(beta),
            "reward_scale": float(reward_scale)}


def tabular_spec_dict(arm: ArmModel) -> dict:
    S, A = arm.n_states, arm.n_actions
    dense = arm.kernel.toarray().reshape(S, A, S)
    return {"type": "tabular", "states": S, "actions": A, "idle": arm.idle,
            "initial": arm.initial, "reward": arm.reward.tolist(), "kernel": dense.tolist()}


def arm_from_spec(spec: dict, horizon: int) -> ArmModel:
    kind = spec.get("type")
    if kind == "coin":
        return build_coin_arm(CoinSpec(int(spec["m"]), float(spec["alpha"]), float(spec["beta"]),
                                       float(spec["reward_scale"]), int(horizon)))
    if kind == "tabular":
        return build_tabular_arm(int(spec["states"]), int(spec["actions"]), int(spec["idle"]),
                                 np.array(spec["reward"], dtype=float),
                                 np.array(spec["kernel"], dtype=float), int(spec["initial"]))
    raise DomainError(f"unknown arm type {kind!r}")


def tabular_instance(arms: list[ArmModel], budget_k: int, horizon: int) -> BanditInstance:
    return BanditInstance(horizon=horizon, budget_k=budget_k,
                          specs=[tabular_spec_dict(a) for a in arms], arms=list(arms))


def twin_instance() -> BanditInstance:
    """Two identical always-rewarding arms, one pull per step, one step."""
    spec = {"type": "tabular", "states": 1, "actions": 2, "idle": 0, "initial": 0,
            "reward": [[0.0, 1.0]], "kernel": [[[1.0], [1.0]]]}
    return BanditInstance(horizon=1, budget_k=1, specs=[dict(spec), dict(spec)])

"""Optimal, greedy and dumb-processing controllers.

Every controller is a lookup table ``(x, b) -> u`` plus an inner map
``u -> k``. ``cost[u]`` is the true expected distortion the controller
incurs when it spends ``u``; gains are always computed with it.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .config import System, SystemConfig
from .energy import CausalityError
from .mdp import MdpModel, build_model, evaluate_policy, rvia_solve
from .rd_core import source_distortion

KINDS = ("OP", "GP", "DP")
TABLE_HEADER = ["source_state", "battery_level", "action", "k_star", "expected_cost"]


@dataclass(frozen=True)
class Controller:
    kind: str
    policy: np.ndarray      # (2, B+1)
    k_of_u: np.ndarray      # (B+1,)
    cost: np.ndarray        # (B+1,) true expected distortion per action
    planning_gain: float | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        B = self.policy.shape[1] - 1
        bad = self.policy > np.arange(B + 1)[None, :]
        if np.any(bad):
            x, b = map(int, np.argwhere(bad)[0])
            raise CausalityError(f"{self.kind} spends {self.policy[x, b]} with only {b} stored in state {(x, b)}")

    @property
    def capacity(self) -> int:
        return self.policy.shape[1] - 1

    def action(self, x: int, b: int) -> int:
        return int(self.policy[x, b])

    def level(self, u: int) -> int:
        return int(self.k_of_u[u])

    def gain(self, model: MdpModel) -> float:
        return evaluate_policy(model, self.policy, cost=self.cost).gain

    def table_rows(self):
        for x in (0, 1):
            for b in range(self.capacity + 1):
                u = int(self.policy[x, b])
                yield x, b, u, int(self.k_of_u[u]), float(self.cost[u])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for x, b, u, k, c in self.table_rows():
            w.writerow([x, b, u, k, repr(c)])
        return buf.getvalue()


def read_policy_table(text: str) -> dict:
    """Parse a serialised table back into ``{(x, b): (u, k, cost)}``."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TABLE_HEADER:
        raise ValueError(f"unexpected policy table header {reader.fieldnames}")
    return {(int(r["source_state"]), int(r["battery_level"])):
            (int(r["action"]), int(r["k_star"]), float(r["expected_cost"])) for r in reader}


def _system(config) -> System:
    return config.resolve() if isinstance(config, SystemConfig) else config


def op_solve(config, model: MdpModel | None = None) -> Controller:
    system = _system(config)
    model = build_model(system) if model is None else model
    sv = system.config.solver
    sol = rvia_solve(model, sv.epsilon, sv.max_iter, tau=sv.tau)
    return Controller("OP", sol.policy, model.k_of_u, model.cost, sol.gain)


def greedy_target(system: System) -> int:
    """Energy needed to reach the unconstrained optimum ``k_R*``."""
    return int(system.energy.table[system.k_r])


def greedy_action(b: int, u_star: int) -> int:
    return min(b, u_star)


def gp_solve(config) -> Controller:
    system = _system(config)
    B = system.capacity
    u_star = greedy_target(system)
    row = np.array([greedy_action(b, u_star) for b in range(B + 1)])
    k_of_u = system.rd.k_table(B)
    return Controller("GP", np.vstack([row, row]), k_of_u, system.rd.curve[k_of_u])


def dp_inner_k(u: int, system: System) -> int:
    """Level that minimises source distortion alone within budget ``u``."""
    if u < 0:
        raise ValueError("energy budget must be non-negative")
    fit = system.fit
    used = system.energy.table
    best = 0
    for k in range(1, fit.m + 1):
        if used[k] <= u and source_distortion(k, fit) < source_distortion(best, fit):
            best = k
    return best


def dp_solve(config) -> Controller:
    """Plan with the distortion model that ignores outage, keep the true cost."""
    system = _system(config)
    B = system.capacity
    k_of_u = np.array([dp_inner_k(u, system) for u in range(B + 1)])
    true_cost = system.rd.curve[k_of_u]
    if system.config.solver.dp_planning_cost == "source":
        planning = np.array([source_distortion(int(k), system.fit) for k in k_of_u])
    else:
        planning = true_cost
    model = build_model(system).with_cost(planning, k_of_u)
    sv = system.config.solver
    sol = rvia_solve(model, sv.epsilon, sv.max_iter, tau=sv.tau)
    return Controller("DP", sol.policy, k_of_u, true_cost, sol.gain)


def build_controllers(config) -> dict:
    system = _system(config)
    return {"OP": op_solve(system), "GP": gp_solve(system), "DP": dp_solve(system)}

"""Per-slot energy consumption, harvest source and battery dynamics.

All MDP-facing quantities are integers counted in energy quanta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class CausalityError(ValueError):
    """Raised when an action spends more energy than the battery holds."""


@dataclass(frozen=True)
class ConsumptionParams:
    e0: float = 1e-9            # J per micro-controller clock cycle
    alpha_p: float = 24.0       # cycles/bit, slope of the LTC cycle count
    beta_p: float = 2.0         # cycles/bit, offset of the LTC cycle count
    eta_a: float = 0.5          # power amplifier efficiency
    beta_s: float = 10e-6       # J, sensing
    beta_c: float = 5e-6        # J, mode switching and synchronisation
    beta_e: float = 0.0         # J, channel encoding
    circuit_rate: float = 5e-3  # J/s, circuitry drain while transmitting
    t_slot: float = 2e-3        # s
    quantum: float = 5e-6       # J per energy quantum

    def __post_init__(self):
        for name in ("e0", "alpha_p", "beta_p", "beta_s", "beta_c",
                     "circuit_rate", "t_slot", "quantum"):
            if not getattr(self, name) > 0:
                raise ValueError(f"energy.{name} must be > 0, got {getattr(self, name)!r}")
        if not self.beta_e >= 0:
            raise ValueError(f"energy.beta_e must be >= 0, got {self.beta_e!r}")
        if not 0 < self.eta_a <= 1:
            raise ValueError(f"energy.eta_a must lie in (0, 1], got {self.eta_a!r}")


def _check_level(k, m):
    if not 0 <= k <= m or int(k) != k:
        raise ValueError(f"compression level k={k!r} outside {{0..{m}}}")


def processing_energy(k: int, params: ConsumptionParams, m: int, l0: float) -> float:
    """Compression energy in joules; zero when the packet is dropped or sent raw."""
    _check_level(k, m)
    if k == 0 or k == m:
        return 0.0
    cycles_per_bit = params.alpha_p * k / m + params.beta_p
    return params.e0 * l0 * cycles_per_bit


def transmission_energy(k: int, params: ConsumptionParams, p_tx: float) -> float:
    if k == 0:
        return 0.0
    return p_tx * params.t_slot / params.eta_a


def circuitry_energy(k: int, params: ConsumptionParams) -> float:
    fixed = params.beta_s + params.beta_c
    if k == 0:
        return fixed
    return fixed + params.beta_e + params.circuit_rate * params.t_slot


def to_quanta(joules: float, quantum: float) -> int:
    # the small slack keeps exact multiples (up to float noise) from rounding up
    return int(math.ceil(joules / quantum - 1e-9))


@dataclass(frozen=True)
class EnergyModel:
    """Energy needed per compression level, tabulated in quanta."""

    params: ConsumptionParams
    m: int
    l0: float
    p_tx: float

    def joules(self, k: int) -> float:
        return (processing_energy(k, self.params, self.m, self.l0)
                + transmission_energy(k, self.params, self.p_tx)
                + circuitry_energy(k, self.params))

    @cached_property
    def table(self) -> np.ndarray:
        """``table[k]`` is the energy in quanta used by level ``k``."""
        q = self.params.quantum
        return np.array([to_quanta(self.joules(k), q) for k in range(self.m + 1)], dtype=np.int64)

    def total_energy_quanta(self, k: int) -> int:
        _check_level(k, self.m)
        return int(self.table[k])

    @property
    def e_max(self) -> int:
        return int(self.table.max())

    @property
    def e_min(self) -> int:
        """Cheapest energy that lets a packet out (any k >= 1)."""
        return int(self.table[1:].min())


def total_energy_quanta(k: int, energy: EnergyModel) -> int:
    return energy.total_energy_quanta(k)


@dataclass(frozen=True)
class HarvestModel:
    """Two-state Markov energy source.

    State 0 ("bad") yields nothing; state 1 ("good") yields a discrete
    normal amount truncated to ``{1..e_max_inflow}``. A zero mean in the
    good state means the harvester produces nothing at all.
    """

    p_bad_to_good: float = 0.3
    p_good_to_bad: float = 0.1
    mu: float = 10.0
    sigma2: float = 3.0
    e_max_inflow: int = 16

    def __post_init__(self):
        for name in ("p_bad_to_good", "p_good_to_bad"):
            p = getattr(self, name)
            if not 0 < p < 1:
                raise ValueError(f"harvest.{name} must lie in (0, 1), got {p!r}")
        if not self.mu >= 0:
            raise ValueError(f"harvest.mu must be >= 0, got {self.mu!r}")
        if not self.sigma2 > 0:
            raise ValueError(f"harvest.sigma2 must be > 0, got {self.sigma2!r}")
        if int(self.e_max_inflow) != self.e_max_inflow or self.e_max_inflow < 1:
            raise ValueError(f"harvest.e_max_inflow must be an integer >= 1, got {self.e_max_inflow!r}")

    @staticmethod
    def default_truncation(mu: float, sigma2: float, capacity: int | None = None) -> int:
        e = max(1, math.ceil(mu + 3.0 * math.sqrt(sigma2)))
        if capacity is not None and capacity >= 1:
            e = min(e, capacity)
        return e

    @property
    def source_matrix(self) -> np.ndarray:
        return np.array([[1 - self.p_bad_to_good, self.p_bad_to_good],
                         [self.p_good_to_bad, 1 - self.p_good_to_bad]])

    @property
    def stationary_source(self) -> np.ndarray:
        tot = self.p_bad_to_good + self.p_good_to_bad
        return np.array([self.p_good_to_bad / tot, self.p_bad_to_good / tot])

    def pmf(self, x: int) -> np.ndarray:
        """Harvest distribution over ``{0..e_max_inflow}`` in source state ``x``."""
        return harvest_pmf(x, self)

    def pmf_matrix(self) -> np.ndarray:
        return np.vstack([self.pmf(0), self.pmf(1)])


def harvest_pmf(x: int, model: HarvestModel) -> np.ndarray:
    if x not in (0, 1):
        raise ValueError(f"source state must be 0 or 1, got {x!r}")
    E = int(model.e_max_inflow)
    out = np.zeros(E + 1)
    if x == 0 or model.mu == 0:
        out[0] = 1.0
        return out
    e = np.arange(1, E + 1)
    logw = -((e - model.mu) ** 2) / (2.0 * model.sigma2)
    w = np.exp(logw - logw.max())
    out[1:] = w / w.sum()
    return out


@dataclass(frozen=True)
class Battery:
    capacity: int
    level: int = field(default=0)

    def __post_init__(self):
        if self.capacity < 0 or not 0 <= self.level <= self.capacity:
            raise ValueError(f"battery level {self.level} outside [0, {self.capacity}]")

    def step(self, e: int, u: int) -> "Battery":
        return Battery(self.capacity, battery_step(self.level, e, u, self.capacity))


def battery_step(b: int, e: int, u: int, capacity: int) -> int:
    """Harvest-store-use update: spend ``u``, bank ``e``, clip at capacity."""
    if u > b:
        raise CausalityError(f"action u={u} exceeds battery level b={b}")
    if u < 0 or e < 0:
        raise ValueError("energy amounts must be non-negative")
    return min(b + e - u, capacity)

"""System configuration: one JSON document with named sections.

Battery size and good-state harvest mean may be given raw (quanta) or
normalised by ``e_max``; they are resolved once ``e_max`` is known from the
energy section. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .energy import ConsumptionParams, EnergyModel, HarvestModel
from .rd_core import LinkModel, RdSolver, SourceFit

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HarvestSpec:
    p_bad_to_good: float = 0.3
    p_good_to_bad: float = 0.1
    sigma2: float = 3.0
    mu: float | None = None
    mu_bar: float | None = 1.0
    e_max_inflow: int | None = None


@dataclass(frozen=True)
class BatterySpec:
    capacity: int | None = None
    b_bar: float | None = 1.5


@dataclass(frozen=True)
class SolverSpec:
    epsilon: float = 1e-6
    max_iter: int = 100_000
    tau: float = 1.0
    dp_planning_cost: str = "source"   # "source" or "expected"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("solver.epsilon must be > 0")
        if self.max_iter < 1:
            raise ValueError("solver.max_iter must be >= 1")
        if not 0 < self.tau <= 1:
            raise ValueError("solver.tau must lie in (0, 1]")
        if self.dp_planning_cost not in ("source", "expected"):
            raise ValueError("solver.dp_planning_cost must be 'source' or 'expected'")


@dataclass(frozen=True)
class SimSpec:
    horizon: int = 100_000
    seed: int = 0
    trace_slots: int = 500

    def __post_init__(self):
        if self.horizon < 1 or self.trace_slots < 1:
            raise ValueError("sim.horizon and sim.trace_slots must be >= 1")


SECTIONS = {
    "source": SourceFit,
    "link": LinkModel,
    "energy": ConsumptionParams,
    "harvest": HarvestSpec,
    "battery": BatterySpec,
    "solver": SolverSpec,
    "sim": SimSpec,
}


@dataclass(frozen=True)
class SystemConfig:
    source: SourceFit = field(default_factory=SourceFit)
    link: LinkModel = field(default_factory=LinkModel)
    energy: ConsumptionParams = field(default_factory=ConsumptionParams)
    harvest: HarvestSpec = field(default_factory=HarvestSpec)
    battery: BatterySpec = field(default_factory=BatterySpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    sim: SimSpec = field(default_factory=SimSpec)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        parts = {}
        for name, kind in SECTIONS.items():
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section '{name}' must be a mapping")
            allowed = {f.name for f in fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown key(s) in section '{name}': {sorted(bad)}")
            try:
                parts[name] = kind(**section)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid section '{name}': {exc}") from exc
        return cls(**parts)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SystemConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "SystemConfig":
        return cls.loads(Path(path).read_text())

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps() + "\n")

    def replace(self, **sections) -> "SystemConfig":
        """Return a copy with fields of the named sections overridden.

        ``cfg.replace(link={"d": 80}, battery={"b_bar": 2})``
        """
        updated = {}
        for name, changes in sections.items():
            if name not in SECTIONS:
                raise ConfigError(f"unknown config section '{name}'")
            updated[name] = dataclasses.replace(getattr(self, name), **changes)
        return dataclasses.replace(self, **updated)

    def resolve(self) -> "System":
        return System(self)


class System:
    """A configuration with e_max-normalised quantities resolved."""

    def __init__(self, config: SystemConfig):
        self.config = config
        fit, link = config.source, config.link
        self.fit = fit
        self.link = link
        self.energy = EnergyModel(config.energy, fit.m, fit.l0, link.p_tx)
        self.e_max = self.energy.e_max
        self.e_min = self.energy.e_min

        bat = config.battery
        if bat.capacity is not None:
            if bat.b_bar is not None and round(bat.b_bar * self.e_max) != bat.capacity:
                log.warning("battery.capacity=%s overrides battery.b_bar=%s", bat.capacity, bat.b_bar)
            capacity = bat.capacity
        elif bat.b_bar is not None:
            capacity = int(round(bat.b_bar * self.e_max))
        else:
            raise ConfigError("battery needs either 'capacity' or 'b_bar'")
        if int(capacity) != capacity or capacity < 0:
            raise ConfigError(f"battery capacity must be a non-negative integer, got {capacity!r}")
        self.capacity = int(capacity)

        hv = config.harvest
        if hv.mu is not None:
            if hv.mu_bar is not None and not math.isclose(hv.mu_bar * self.e_max, hv.mu):
                log.warning("harvest.mu=%s overrides harvest.mu_bar=%s", hv.mu, hv.mu_bar)
            mu = float(hv.mu)
        elif hv.mu_bar is not None:
            mu = float(hv.mu_bar) * self.e_max
        else:
            raise ConfigError("harvest needs either 'mu' or 'mu_bar'")
        e_inflow = hv.e_max_inflow
        if e_inflow is None:
            e_inflow = HarvestModel.default_truncation(mu, hv.sigma2, self.capacity)
        try:
            self.harvest = HarvestModel(hv.p_bad_to_good, hv.p_good_to_bad, mu, hv.sigma2, int(e_inflow))
        except ValueError as exc:
            raise ConfigError(f"invalid section 'harvest': {exc}") from exc
        self.mu = mu

        self.rd = RdSolver(fit, link, self.energy)
        self.gamma_bar = self.rd.gamma_bar
        self.k_r = self.rd.k_r

    @property
    def mu_bar(self) -> float:
        return self.mu / self.e_max

    @property
    def b_bar(self) -> float:
        return self.capacity / self.e_max

    def summary(self) -> dict:
        return {
            "e_max": self.e_max,
            "e_min": self.e_min,
            "k_r": self.k_r,
            "capacity": self.capacity,
            "mu": self.mu,
            "gamma_bar_db": 10 * math.log10(self.gamma_bar),
        }

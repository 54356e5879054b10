"""Slot-by-slot Monte Carlo of the closed loop.

Randomness comes from three independent PCG64 substreams spawned from one
``SeedSequence``: source-state transitions, harvest amounts and channel
fading. Each slot consumes exactly one uniform from each, so controllers run
with the same seed see identical source and harvest realisations.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .config import System, SystemConfig
from .energy import CausalityError

TRACE_HEADER = ["slot", "x", "e", "b_before", "u", "k", "outage", "distortion", "b_after"]
N_BATCHES = 100


@dataclass(frozen=True)
class TraceRecord:
    slot: int
    x: int
    e: int
    b_before: int
    u: int
    k: int
    outage: bool
    distortion: float
    b_after: int


@dataclass
class Trace:
    x: np.ndarray
    e: np.ndarray
    b_before: np.ndarray
    u: np.ndarray
    k: np.ndarray
    outage: np.ndarray
    distortion: np.ndarray
    b_after: np.ndarray

    def __len__(self):
        return len(self.x)

    def __getitem__(self, n) -> TraceRecord:
        return TraceRecord(n, int(self.x[n]), int(self.e[n]), int(self.b_before[n]), int(self.u[n]),
                           int(self.k[n]), bool(self.outage[n]), float(self.distortion[n]),
                           int(self.b_after[n]))

    def head(self, n: int) -> "Trace":
        return Trace(*(getattr(self, f)[:n] for f in self.__dataclass_fields__))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for n in range(len(self)):
            r = self[n]
            w.writerow([n, r.x, r.e, r.b_before, r.u, r.k, int(r.outage), repr(r.distortion), r.b_after])
        return buf.getvalue()


@dataclass
class SimReport:
    horizon: int
    mean_distortion: float
    half_width: float
    empty_fraction: float
    comparison: dict = field(default_factory=dict)


def streams(seed: int, horizon: int):
    """Uniform draws for the source, harvest and channel substreams."""
    src, hv, ch = np.random.SeedSequence(seed).spawn(3)
    return (np.random.Generator(np.random.PCG64(src)).random(horizon + 1),
            np.random.Generator(np.random.PCG64(hv)).random(horizon),
            np.random.Generator(np.random.PCG64(ch)).random(horizon))


def environment(system: System, horizon: int, seed: int):
    """Source-state path and harvest path shared by every controller."""
    us, uh, _ = streams(seed, horizon)
    P = system.harvest.source_matrix
    x = np.empty(horizon, dtype=np.int64)
    state = int(us[0] < system.harvest.stationary_source[1])
    for n in range(horizon):
        x[n] = state
        state = int(us[n + 1] < P[state, 1])
    pmf = system.harvest.pmf_matrix()
    E = pmf.shape[1] - 1
    e = np.empty(horizon, dtype=np.int64)
    for s in (0, 1):
        draws = np.minimum(np.searchsorted(np.cumsum(pmf[s]), uh, side="right"), E)
        e[x == s] = draws[x == s]
    return x, e


def simulate(config, controller, horizon: int, seed: int, initial_battery: int | None = None):
    """Run one replication; returns ``(trace, report)``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    system = config.resolve() if isinstance(config, SystemConfig) else config
    B = system.capacity
    if controller.policy.shape != (2, B + 1):
        raise ValueError("controller table does not match the battery capacity")
    b = B if initial_battery is None else int(initial_battery)
    if not 0 <= b <= B:
        raise ValueError(f"initial battery {b} outside [0, {B}]")

    x, e = environment(system, horizon, seed)
    _, _, uc = streams(seed, horizon)

    rows = controller.policy.tolist()
    xs, es = x.tolist(), e.tolist()
    b_before = [0] * horizon
    for n in range(horizon):
        b_before[n] = b
        u = rows[xs[n]][b]
        if u > b or u < 0:
            raise CausalityError(f"{controller.kind} spends {u} with {b} stored at slot {n}")
        b = b - u + es[n]
        if b > B:
            b = B

    b_before = np.array(b_before, dtype=np.int64)
    u = controller.policy[x, b_before]
    k = controller.k_of_u[u]
    p_out = -np.expm1(-np.expm1(np.log(2) * (np.arange(system.fit.m + 1) / system.fit.m)
                                * (system.fit.l0 / system.fit.s)) / system.gamma_bar)
    outage = (k > 0) & (uc < p_out[k])
    d_fl = system.fit.d_fl
    kk = np.maximum(k, 1)
    source_d = system.fit.b * ((kk / system.fit.m) ** (-system.fit.a) - 1.0)
    distortion = np.where((k == 0) | outage, d_fl, source_d)
    b_after = np.minimum(b_before - u + e, B)

    trace = Trace(x, e, b_before, u, k, outage, distortion, b_after)
    return trace, report(trace)


def batch_means(values: np.ndarray, n_batches: int = N_BATCHES):
    """Mean and 95% half-width from non-overlapping batch means."""
    n = len(values)
    if n < 2 * n_batches:
        mean = float(values.mean())
        if n < 2:
            return mean, float("inf")
        return mean, float(stats.t.ppf(0.975, n - 1) * values.std(ddof=1) / np.sqrt(n))
    size = n // n_batches
    means = values[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    half = stats.t.ppf(0.975, n_batches - 1) * means.std(ddof=1) / np.sqrt(n_batches)
    return float(values.mean()), float(half)


def report(trace: Trace) -> SimReport:
    mean, half = batch_means(trace.distortion)
    return SimReport(len(trace), mean, half, float(np.mean(trace.b_before == 0)))


def simulate_all(config, controllers: dict, horizon: int, seed: int, initial_battery: int | None = None):
    """Run several controllers on common random numbers."""
    traces, reports = {}, {}
    for name, ctl in controllers.items():
        traces[name], reports[name] = simulate(config, ctl, horizon, seed, initial_battery)
    block = {name: (r.mean_distortion, r.half_width) for name, r in reports.items()}
    for r in reports.values():
        r.comparison = block
    return traces, reports


@dataclass(frozen=True)
class BatteryStats:
    min: int
    max: int
    mean: float
    excursion: int
    empty_in_bad_fraction: float
    below_e_min_in_bad_fraction: float | None


def battery_trace_stats(trace: Trace, e_min: int | None = None) -> BatteryStats:
    if len(trace) == 0:
        raise ValueError("empty trace")
    b = trace.b_before
    bad = trace.x == 0
    n_bad = int(bad.sum())
    empty = float((b[bad] == 0).sum() / n_bad) if n_bad else 0.0
    low = None
    if e_min is not None:
        low = float((b[bad] < e_min).sum() / n_bad) if n_bad else 0.0
    return BatteryStats(int(b.min()), int(b.max()), float(b.mean()), int(b.max() - b.min()), empty, low)

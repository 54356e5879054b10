"""Distortion and outage models, and the per-slot rate-distortion problem.

Given an energy budget ``u`` (quanta), :func:`solve_k_star` picks the
compression level ``k`` in ``{0..m}`` that minimises the expected received
distortion over a Rayleigh block-fading link without transmit CSI.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel

SPEED_OF_LIGHT = 2.998e8


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class SourceFit:
    a: float = 0.69
    b: float = 3.27
    d_fl: float = 1.0
    m: int = 20
    l0: float = 2000.0   # bits per slot before compression
    s: float = 2000.0    # bits that fit in one slot

    def __post_init__(self):
        if not 0 < self.a < 1:
            raise ValueError(f"source.a must lie in (0, 1), got {self.a!r}")
        if not self.b > 0:
            raise ValueError(f"source.b must be > 0, got {self.b!r}")
        if not self.d_fl > 0:
            raise ValueError(f"source.d_fl must be > 0, got {self.d_fl!r}")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"source.m must be an integer >= 2, got {self.m!r}")
        if not (self.l0 > 0 and self.s > 0):
            raise ValueError("source.l0 and source.s must be > 0")
        if self.l0 > self.s:
            raise ValueError(f"source.l0={self.l0} exceeds slot capacity source.s={self.s}")


@dataclass(frozen=True)
class LinkModel:
    p_tx: float = 10 ** (14 / 10) * 1e-3  # W (14 dBm)
    d: float = 100.0                      # m
    d0: float = 1.0                       # m
    eta: float = 3.5
    f0: float = 868.3e6                   # Hz
    noise_psd: float = -167.0             # dBm/Hz
    bandwidth: float = 125e3              # Hz

    def __post_init__(self):
        for name in ("p_tx", "d", "d0", "eta", "f0", "bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"link.{name} must be > 0, got {getattr(self, name)!r}")
        if self.d < self.d0:
            raise ValueError(f"link.d={self.d} is inside the far-field distance d0={self.d0}")


@dataclass(frozen=True)
class RdCoefficients:
    c1: float
    c2: float
    c3: float
    c4: float
    d1: float
    d2: float
    d3: float
    d4: float
    a: float
    m: int


@dataclass(frozen=True)
class RdSolution:
    k: int
    rate: float
    expected_distortion: float
    energy_feasible: bool


def source_distortion(k: int, fit: SourceFit) -> float:
    if not 0 <= k <= fit.m:
        raise ValueError(f"compression level k={k!r} outside {{0..{fit.m}}}")
    if k == 0:
        return fit.d_fl
    return fit.b * ((k / fit.m) ** (-fit.a) - 1.0)


def coding_rate(k: float, fit: SourceFit) -> float:
    """Channel rate in bits per channel use for level ``k``."""
    return (k / fit.m) * (fit.l0 / fit.s)


def noise_power(link: LinkModel) -> float:
    """Total noise power in watts."""
    return 10 ** (link.noise_psd / 10) * 1e-3 * link.bandwidth


def avg_snr(link: LinkModel) -> float:
    """Mean received SNR (unit-power fading)."""
    A = 4 * math.pi * link.d0 * link.f0 / SPEED_OF_LIGHT
    return link.p_tx / (A ** 2 * (link.d / link.d0) ** link.eta * noise_power(link))


def _outage(rate, gamma_bar):
    return -np.expm1(-np.expm1(rate * math.log(2)) / gamma_bar)


def outage_probability(k: int, fit: SourceFit, link: LinkModel, gamma_bar: float | None = None) -> float:
    if not 0 <= k <= fit.m:
        raise ValueError(f"compression level k={k!r} outside {{0..{fit.m}}}")
    g = avg_snr(link) if gamma_bar is None else gamma_bar
    return float(_outage(coding_rate(k, fit), g))


def expected_distortion(k: int, fit: SourceFit, link: LinkModel, gamma_bar: float | None = None) -> float:
    g = avg_snr(link) if gamma_bar is None else gamma_bar
    p = outage_probability(k, fit, link, g)
    return source_distortion(k, fit) * (1 - p) + fit.d_fl * p


def expected_distortion_curve(fit: SourceFit, gamma_bar: float) -> np.ndarray:
    """Expected distortion for every level ``k = 0..m`` at once."""
    k = np.arange(fit.m + 1)
    d = np.empty(fit.m + 1)
    d[0] = fit.d_fl
    d[1:] = fit.b * ((k[1:] / fit.m) ** (-fit.a) - 1.0)
    p = _outage(coding_rate(k, fit), gamma_bar)
    return d * (1 - p) + fit.d_fl * p


def expected_distortion_w(w, fit: SourceFit, gamma_bar: float):
    """Continuous extension of the expected distortion on ``w`` in ``[1, m]``."""
    w = np.asarray(w, dtype=float)
    d = fit.b * ((w / fit.m) ** (-fit.a) - 1.0)
    p = _outage(coding_rate(w, fit), gamma_bar)
    return d * (1 - p) + fit.d_fl * p


def rd_coefficients(fit: SourceFit, link: LinkModel | None = None, *,
                    gamma_bar: float | None = None, normalized: bool = False) -> RdCoefficients:
    """Coefficients of the closed-form expected distortion and its derivative.

    With ``normalized=True`` the common positive factor ``exp(1/gamma_bar)``
    is dropped from c1, c4, d1..d4; signs of ``f(w)`` are unchanged and the
    values stay finite at very low SNR.
    """
    g = avg_snr(link) if gamma_bar is None else gamma_bar
    scale = 1.0 if normalized else math.exp(1.0 / g)
    c1 = fit.b * fit.m ** fit.a * scale
    c2 = 1.0 / g
    c3 = fit.l0 / (fit.m * fit.s)
    c4 = scale * (fit.b + fit.d_fl)
    ln2 = math.log(2)
    return RdCoefficients(
        c1=c1, c2=c2, c3=c3, c4=c4,
        d1=fit.a * c1,
        d2=c1 * c2 * c3 * ln2,
        d3=c2 * c3 * c4 * ln2,
        d4=scale * c2 * c3 * ln2,
        a=fit.a, m=fit.m,
    )


def derivative_sign(w, coeffs: RdCoefficients):
    """``f(w)``; the expected distortion has slope ``-exp(-c2 2^(c3 w)) f(w)``."""
    w_arr = np.asarray(w, dtype=float)
    if np.any((w_arr < 1) | (w_arr > coeffs.m)):
        raise ValueError(f"w must lie in [1, {coeffs.m}]")
    growth = 2.0 ** (w_arr * coeffs.c3)
    out = (coeffs.d1 * w_arr ** (-coeffs.a - 1)
           + coeffs.d2 * w_arr ** (-coeffs.a) * growth
           - coeffs.d3 * growth)
    return float(out) if out.ndim == 0 else out


def g_zero(fit: SourceFit) -> float:
    """Root of ``d2 w^-a = d3``: below it f(w) > 0 for sure."""
    return fit.m * (fit.b / (fit.b + fit.d_fl)) ** (1.0 / fit.a)


def solve_k_r(fit: SourceFit, link: LinkModel | None = None, *, gamma_bar: float | None = None) -> int:
    """Unconstrained minimiser of the expected distortion over ``{1..m}``.

    Uses the sign of ``f`` at both ends, then a bisection on integer
    levels for the unique sign change, and settles between the two
    integer neighbours of the continuous minimiser (ties go to the
    smaller level).
    """
    if fit.l0 > fit.s:
        raise UnsupportedConfiguration("l0 > s: the expected distortion may have several local minima")
    g = avg_snr(link) if gamma_bar is None else gamma_bar
    coeffs = rd_coefficients(fit, gamma_bar=g, normalized=True)
    curve = expected_distortion_curve(fit, g)
    m = fit.m
    if np.ptp(curve[1:]) == 0.0:
        # outage saturated in floating point: every level costs d_fl
        return 1

    def f(k):
        return derivative_sign(k, coeffs)

    f1, fm = f(1), f(m)
    if f1 > 0 and fm > 0:
        # slope negative everywhere: send uncompressed
        return m
    if f1 <= 0 and fm <= 0:
        return 1
    if not (f1 > 0 >= fm):
        # the sign pattern rules out a single crossing; settle it by scanning
        return int(np.argmin(curve[1:])) + 1

    lo = max(1, min(m - 1, int(math.floor(g_zero(fit)))))
    if f(lo) <= 0:
        lo = 1
    hi = m
    # invariant: f(lo) > 0 >= f(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return lo if curve[lo] <= curve[hi] else hi


def solve_k_e(u: int, energy: EnergyModel) -> int:
    """Largest level in ``{1..m-1}`` whose energy fits in ``u``; 0 if none."""
    if u < 0:
        raise ValueError("energy budget must be non-negative")
    if u == 0:
        return 0
    used = energy.table[1:energy.m]
    affordable = np.nonzero(used <= u)[0]
    if affordable.size == 0:
        return 0
    return int(affordable[-1]) + 1


class RdSolver:
    """Precomputes everything needed to answer ``k*(u)`` for many budgets."""

    def __init__(self, fit: SourceFit, link: LinkModel, energy: EnergyModel):
        if energy.m != fit.m:
            raise ValueError("energy model and source fit disagree on m")
        self.fit = fit
        self.link = link
        self.energy = energy
        self.gamma_bar = avg_snr(link)
        self.curve = expected_distortion_curve(fit, self.gamma_bar)
        self.k_r = solve_k_r(fit, gamma_bar=self.gamma_bar)

    def k_star(self, u: int) -> int:
        m = self.fit.m
        used = self.energy.table
        candidates = [0]
        if self.k_r < m:
            k = min(self.k_r, solve_k_e(u, self.energy))
            if k > 0:
                candidates.append(k)
        if used[m] <= u:
            candidates.append(m)
        # smallest expected distortion; ties go to the smaller level
        return min(candidates, key=lambda k: (self.curve[k], k))

    def solve(self, u: int) -> RdSolution:
        k = self.k_star(u)
        return RdSolution(
            k=k,
            rate=coding_rate(k, self.fit),
            expected_distortion=float(self.curve[k]),
            energy_feasible=bool(k == 0 or self.energy.table[k] <= u),
        )

    def k_table(self, u_max: int) -> np.ndarray:
        return np.array([self.k_star(u) for u in range(u_max + 1)], dtype=np.int64)


def solve_k_star(u: int, fit: SourceFit, link: LinkModel, energy: EnergyModel) -> RdSolution:
    if u < 0:
        raise ValueError("energy budget must be non-negative")
    return RdSolver(fit, link, energy).solve(u)

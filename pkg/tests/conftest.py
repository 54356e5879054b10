import numpy as np
import pytest

from ehjscc import SystemConfig

ACCEPTANCE = {}


def random_config(rng, *, mdp=True):
    """A random configuration satisfying l0 <= s, spanning all RDP regimes."""
    s = 2000.0
    cfg = SystemConfig().replace(
        source=dict(a=float(rng.uniform(0.05, 0.95)), b=float(rng.uniform(0.2, 10.0)),
                    d_fl=float(rng.uniform(0.3, 40.0)), m=int(rng.integers(2, 41)),
                    l0=float(rng.uniform(0.05, 1.0) * s), s=s),
        link=dict(d=float(np.exp(rng.uniform(0.0, np.log(3000.0))))),
        energy=dict(quantum=float(rng.uniform(3e-6, 12e-6)),
                    e0=float(np.exp(rng.uniform(np.log(2e-10), np.log(5e-9))))),
    )
    if mdp:
        cfg = cfg.replace(
            harvest=dict(mu_bar=float(rng.uniform(0.1, 2.0)),
                         p_good_to_bad=float(rng.uniform(0.05, 0.5)),
                         p_bad_to_good=float(rng.uniform(0.05, 0.9))),
            battery=dict(b_bar=float(rng.uniform(0.5, 3.0))),
        )
    return cfg


def tiny_config(rng):
    """B <= 3, harvest support {0..E} with E <= 2, e_max of a few quanta."""
    return SystemConfig().replace(
        link=dict(d=float(np.exp(rng.uniform(0.0, np.log(2000.0))))),
        energy=dict(quantum=float(rng.uniform(40e-6, 150e-6))),
        harvest=dict(mu=float(rng.uniform(0.0, 3.0)), mu_bar=None,
                     e_max_inflow=int(rng.integers(1, 3)),
                     p_good_to_bad=float(rng.uniform(0.05, 0.95)),
                     p_bad_to_good=float(rng.uniform(0.05, 0.95))),
        battery=dict(capacity=int(rng.integers(0, 4)), b_bar=None),
    )


@pytest.fixture
def default_config():
    return SystemConfig()


@pytest.fixture
def low_snr_config():
    """Interior k_R*: weak link and a large drop penalty."""
    return SystemConfig().replace(source=dict(d_fl=25.0), link=dict(d=900.0))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {detail}")

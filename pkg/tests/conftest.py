import time

import numpy as np
import pytest

from carma.experiment import load_config
from carma.solver import solve_sne

_SOLVED: dict = {}
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def solved(name: str):
    """(config, solution, seconds) for a bundled case, solved once per session."""
    if name not in _SOLVED:
        cfg = load_config(name)
        t0 = time.perf_counter()
        sol = solve_sne(cfg.population(), cfg.bottleneck, cfg.karma, cfg.solver)
        _SOLVED[name] = (cfg, sol, time.perf_counter() - t0)
    return _SOLVED[name]


@pytest.fixture(scope="session")
def case1():
    return solved("case1")


@pytest.fixture(scope="session")
def case1_mc(case1):
    """Case 1 equilibrium policy simulated with 9000 agents for 10^4 days."""
    from carma.montecarlo import AgentPopulation, simulate

    cfg, sol, _ = case1
    rng = np.random.default_rng(2024)
    agents = AgentPopulation.from_distribution(sol.d_star, 9000, rng)
    t0 = time.perf_counter()
    res = simulate(agents, sol.pi_star, 10_000, cfg.bottleneck, cfg.population(), seed=7,
                   burn_in=500, discount=cfg.solver.discount)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def case2():
    return solved("case2")


@pytest.fixture(scope="session")
def case3():
    return solved("case3")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

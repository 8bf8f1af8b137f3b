"""Solve the three bundled case studies and compare NOM, TOLL and CARMA.

Takes about a minute. For each case the script prints the system and per-type
queue delays and trip costs, the share of each type that ends up better off,
and the threshold bid profile of the karma equilibrium.
"""
import time

import numpy as np

from carma.experiment import load_config
from carma.metrics import carma_metrics, nom_metrics, toll_metrics
from carma.solver import solve_sne


def show(name: str):
    cfg = load_config(name)
    pop, params = cfg.population(), cfg.bottleneck
    t0 = time.perf_counter()
    sol = solve_sne(pop, params, cfg.karma, cfg.solver)
    print(f"\n== {name}: {len(cfg.types)} type(s), solved in {time.perf_counter() - t0:.1f} s "
          f"(stationarity {sol.stationarity:.1e}, gap {sol.optimality:.1e})")

    rows = [nom_metrics(pop, params), toll_metrics(pop, params),
            carma_metrics(sol.d_star, sol.pi_star, sol.context, pop, params)]
    names = [t.name for t in cfg.types]
    print(f"{'scheme':8s}{'delay':>9s}{'cost':>9s}   per-type cost")
    for m in rows:
        per = "  ".join(f"{n}={c:.2f}" for n, c in zip(names, m.per_type_cost))
        print(f"{m.scheme:8s}{m.system_queue_delay:9.2f}{m.system_cost:9.2f}   {per}")

    k = np.arange(sol.d_star.shape[-1])
    mean_k = sol.d_star.sum(axis=1) @ k / pop.shares
    print("mean karma by type:", np.round(mean_k, 2).tolist())
    print("threshold bids:", [int(b) for b in sol.b_star_profile])


if __name__ == "__main__":
    for case in ("case1", "case2", "case3"):
        show(case)

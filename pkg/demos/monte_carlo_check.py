"""Does the mean-field equilibrium survive a finite population?

Solve Case 1, then let 9000 simulated commuters follow the equilibrium policy
with integer karma, random tie-breaks and floor/ceil redistribution. The
simulated queue delay and karma histogram are compared with the mean-field
predictions. Pass a day count on the command line (default 2000).
"""
import sys
import time

import numpy as np

from carma.experiment import load_config
from carma.metrics import carma_metrics
from carma.montecarlo import AgentPopulation, simulate, total_variation
from carma.solver import solve_sne

days = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = load_config("case1")
pop = cfg.population()
sol = solve_sne(pop, cfg.bottleneck, cfg.karma, cfg.solver)
field = carma_metrics(sol.d_star, sol.pi_star, sol.context, pop, cfg.bottleneck, interpolate=False)

agents = AgentPopulation.from_distribution(sol.d_star, 9000, np.random.default_rng(0))
t0 = time.perf_counter()
res = simulate(agents, sol.pi_star, days, cfg.bottleneck, pop, seed=1, burn_in=days // 10)
print(f"{days} days in {time.perf_counter() - t0:.1f} s")

print(f"queue delay: simulated {res.mean_queue_delay:.3f} min, mean field {field.system_queue_delay:.3f} min")
print(f"trip cost:   simulated {res.mean_cost:.3f},     mean field {field.system_cost:.3f}")
print(f"karma histogram total variation: {total_variation(res.karma_histogram, sol.d_star):.4f}")
print(f"total karma over the run: min {res.karma_totals.min()}, max {res.karma_totals.max()}")

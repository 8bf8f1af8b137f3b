"""One interval of the fast-lane auction, step by step.

Three bid levels compete for a fast lane that admits 2% of the population
per interval. The script prints the threshold bid, who gets in, what they pay
and how the payments flow back to every commuter as karma.
"""
import numpy as np

from carma.mechanism import (
    KarmaGrid,
    average_payment,
    fast_prob_exact,
    fast_prob_smooth,
    karma_transition,
    threshold_bids,
)

CAP = 0.02

# bid mass for a single departure interval: 5% bid 0, 2% bid 2, 0.5% bid 5
nu = np.zeros((1, 8))
nu[0, [0, 2, 5]] = [0.05, 0.02, 0.005]

b_star = threshold_bids(nu, CAP)[0]
psi = fast_prob_exact(nu, CAP)[0]
print(f"threshold bid b* = {b_star}")
for b in (0, 2, 5):
    print(f"  bid {b}: admitted with probability {psi[b]:.3f}")

# the smoothed allocation used inside the solver stays close at the tie
for eps in (1e-2, 1e-3, 1e-4, 1e-6):
    print(f"  eps={eps:g}: psi(b*) = {fast_prob_smooth(nu, CAP, eps)[0, b_star]:.5f}")

p_bar, frac = average_payment(nu, psi[None, :])
print(f"\naverage payment per commuter p_bar = {p_bar:.4f} (rounded up with prob {frac:.4f})")

# karma of a commuter holding 6 who bids 2
grid = KarmaGrid(k_max=12, k_bar=6)
dist, _ = karma_transition(6, 2, psi[2], p_bar, grid)
for k in np.nonzero(dist)[0]:
    print(f"  next karma {k:2d} with probability {dist[k]:.4f}")
print(f"expected next karma {dist @ np.arange(13):.4f} = 6 - {psi[2]:.2f}*2 + {p_bar:.4f}")

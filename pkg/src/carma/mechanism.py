"""Karma auction for fast-lane access: threshold bids, allocation
probabilities, payments and the redistribution kernel.

Action masses are arrays ``nu[t, b]`` over departure interval and bid, with
total mass one. ``cap_frac`` is the fast-lane capacity of one interval as a
fraction of the population.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KarmaGrid:
    k_max: int = 40
    k_bar: float = 10.0

    def __post_init__(self):
        for problem in self.violations():
            raise ValueError(problem)

    def violations(self) -> list[str]:
        out = []
        if int(self.k_max) != self.k_max or self.k_max < 0:
            out.append("k_max must be a non-negative integer")
        elif not (0 <= self.k_bar <= self.k_max):
            out.append("k_bar must lie in [0, k_max]")
        return out

    @property
    def n_levels(self) -> int:
        return int(self.k_max) + 1

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.n_levels)


def action_mass(d: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Population mass on each joint action.

    ``d`` has shape (types, urgency, karma) and ``pi`` shape
    (types, urgency, karma, T, bids).
    """
    check_bid_feasibility(pi)
    return np.einsum("xuk,xuktb->tb", d, pi)


def check_bid_feasibility(pi: np.ndarray, atol: float = 0.0):
    n_k, n_b = pi.shape[-3], pi.shape[-1]
    infeasible = np.arange(n_b)[None, :] > np.arange(n_k)[:, None]
    bad = pi[..., infeasible[:, None, :].repeat(pi.shape[-2], axis=1)]
    if bad.size and np.max(bad) > atol:
        raise ValueError("policy places weight on bids exceeding karma")


def _tail_above(nu_t: np.ndarray) -> np.ndarray:
    """tail[b] = sum of nu_t[b'] over b' > b."""
    inclusive = np.cumsum(nu_t[::-1])[::-1]
    return inclusive - nu_t


def threshold_bids(nu: np.ndarray, cap_frac: float) -> np.ndarray:
    """Threshold bid of every interval: the largest b whose tail mass (b' >= b) reaches capacity."""
    inclusive = np.cumsum(nu[:, ::-1], axis=1)[:, ::-1]
    out = np.zeros(nu.shape[0], dtype=int)
    for t in range(nu.shape[0]):
        hit = np.nonzero(inclusive[t] >= cap_frac)[0]
        out[t] = hit[-1] if hit.size else 0
    return out


def threshold_bid(nu: np.ndarray, t: int, cap_frac: float) -> int:
    return int(threshold_bids(nu[t:t + 1], cap_frac)[0])


def fast_prob_exact(nu: np.ndarray, cap_frac: float) -> np.ndarray:
    """Exact probability of entering the fast lane for every (t, b)."""
    b_star = threshold_bids(nu, cap_frac)
    bids = np.arange(nu.shape[1])
    psi = (bids[None, :] > b_star[:, None]).astype(float)
    for t, bs in enumerate(b_star):
        tie = nu[t, bs]
        if tie > 0:
            above = nu[t, bs + 1:].sum()
            psi[t, bs] = min(1.0, max(0.0, (cap_frac - above) / tie))
        else:
            psi[t, bs] = 1.0
    return psi


def outcome_prob_exact(nu: np.ndarray, t: int, b: int, cap_frac: float) -> float:
    return float(fast_prob_exact(nu[t:t + 1], cap_frac)[0, b])


def fast_prob_smooth(nu: np.ndarray, cap_frac: float, epsilon: float) -> np.ndarray:
    """Continuous approximation of :func:`fast_prob_exact` with smoothing ``epsilon``.

    Reads as: admitted for sure when the mass strictly above b plus the atom
    at b fits into capacity with slack ``epsilon``, rejected when the mass
    strictly above b already fills capacity, proportional share otherwise.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    above = np.stack([_tail_above(row) for row in nu])
    share = (cap_frac - above) / (nu + epsilon)
    psi = np.where(above <= cap_frac - nu - epsilon, 1.0, share)
    psi = np.where(above >= cap_frac, 0.0, psi)
    return np.clip(psi, 0.0, 1.0)


def outcome_prob_smooth(nu, t: int, b: int, cap_frac: float, epsilon: float) -> float:
    return float(fast_prob_smooth(nu[t:t + 1], cap_frac, epsilon)[0, b])


def payment(b: int, fast: bool) -> int:
    if b < 0:
        raise ValueError("bid must be non-negative")
    return b if fast else 0


def average_payment(nu: np.ndarray, psi_fast: np.ndarray) -> tuple[float, float]:
    """Average karma paid per commuter and the fractional part used for rounding."""
    bids = np.arange(nu.shape[1])
    p_bar = float(np.sum(nu * psi_fast * bids[None, :]))
    return p_bar, p_bar - math.floor(p_bar)


def redistribution(p_bar: float) -> tuple[int, int, float]:
    """(floor, ceil, weight on ceil) of the uniform redistribution lottery."""
    lo = math.floor(p_bar)
    return lo, lo + 1, p_bar - lo


def karma_transition(k: int, b: int, psi_fast: float, p_bar: float,
                     grid: KarmaGrid) -> tuple[np.ndarray, float]:
    """Distribution of next-day karma for one commuter, and the mass clamped at k_max.

    Returns ``(dist, clamped)`` where ``dist`` has length ``k_max + 1``.
    """
    if b > k:
        raise ValueError("bid exceeds karma")
    lo, hi, f = redistribution(p_bar)
    dist = np.zeros(grid.n_levels)
    clamped = 0.0
    for base, w_o in ((k - b, psi_fast), (k, 1.0 - psi_fast)):
        for add, w_r in ((lo, 1.0 - f), (hi, f)):
            w = w_o * w_r
            if w == 0:
                continue
            nxt = base + add
            if nxt > grid.k_max:
                clamped += w
                nxt = grid.k_max
            dist[nxt] += w
    return dist, clamped


def post_payment(fast_w: np.ndarray, slow_w: np.ndarray) -> np.ndarray:
    """Karma mass after payments, before redistribution.

    ``fast_w[..., k, b]`` is mass holding k that enters the fast lane with bid
    b, ``slow_w[..., k]`` mass holding k that takes the slow lane. Returns
    ``post[..., k, k']``.
    """
    K = slow_w.shape[-1]
    kk, bb = np.tril_indices(K)
    post = np.zeros(slow_w.shape + (K,))
    post[..., kk, kk - bb] += fast_w[..., kk, bb]
    diag = np.arange(K)
    post[..., diag, diag] += slow_w
    return post


def received(mass: np.ndarray, level: float, k_max: int) -> float:
    """Expected karma handed out when post-payment masses receive the lottery at ``level``."""
    lo, hi, f = redistribution(level)
    room = k_max - np.arange(mass.size)
    return float(mass @ ((1.0 - f) * np.minimum(lo, room) + f * np.minimum(hi, room)))


def conserving_level(mass: np.ndarray, p_bar: float, k_max: int) -> float:
    """Redistribution level that hands out exactly ``p_bar`` despite the cap at ``k_max``.

    Commuters at the cap cannot hold their share, so the others receive a
    slightly larger lottery. Equals ``p_bar`` whenever nobody hits the cap.
    """
    total = mass.sum()
    if total <= 0:
        return p_bar
    mass = mass / total
    if received(mass, p_bar, k_max) >= p_bar:
        return p_bar
    n = math.floor(p_bar) + 1
    while n < k_max and received(mass, n, k_max) < p_bar:
        n += 1
    lo_val = received(mass, n - 1, k_max)
    hi_val = received(mass, n, k_max)
    if hi_val < p_bar:
        return float(n)
    # received() is linear in the level between consecutive integers
    lo_level = max(float(n - 1), p_bar)
    lo_val = received(mass, lo_level, k_max)
    return lo_level + (p_bar - lo_val) / (hi_val - lo_val) * (n - lo_level)


def shift_redistribute(mass: np.ndarray, p_bar: float, k_max: int):
    """Apply the redistribution lottery to post-payment karma masses along the last axis.

    Returns the shifted masses and the total mass that was clamped at ``k_max``.
    """
    lo, hi, f = redistribution(p_bar)
    out = np.zeros_like(mass)
    clamped = 0.0
    K = k_max + 1
    for add, w in ((lo, 1.0 - f), (hi, f)):
        if w == 0:
            continue
        if add >= K:
            out[..., -1] += w * mass.sum(axis=-1)
            clamped += w * float(mass.sum())
            continue
        out[..., add:] += w * mass[..., :K - add]
        if add > 0:
            spill = mass[..., K - add:]
            out[..., -1] += w * spill.sum(axis=-1)
            clamped += w * float(spill.sum())
    return out, clamped

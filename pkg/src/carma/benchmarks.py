"""Closed-form equilibria of the uncontrolled bottleneck (NOM) and of the
optimally tolled fast lane (TOLL) with a discrete VOT distribution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bottleneck import BottleneckParams


@dataclass(frozen=True)
class VotDistribution:
    levels: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probs", probs)
        if levels.ndim != 1 or levels.shape != probs.shape or levels.size == 0:
            raise ValueError("levels and probs must be non-empty 1-d arrays of equal length")
        if np.any(levels <= 0) or np.any(np.diff(levels) <= 0):
            raise ValueError("VOT levels must be positive and strictly ascending")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("VOT probabilities must be non-negative and sum to 1")

    @classmethod
    def from_samples(cls, levels, probs) -> "VotDistribution":
        """Merge duplicate levels and sort; zero-probability levels are dropped."""
        levels = np.asarray(levels, dtype=float).ravel()
        probs = np.asarray(probs, dtype=float).ravel()
        keep = probs > 0
        uniq, inv = np.unique(levels[keep], return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, probs[keep])
        return cls(uniq, merged / merged.sum())

    @property
    def mean(self) -> float:
        return float(self.levels @ self.probs)


@dataclass(frozen=True)
class NomEquilibrium:
    c_star: float
    t_start: float
    t_end: float
    t_peak: float
    mean_queue_delay: float
    mean_cost: float
    per_level_cost: np.ndarray


@dataclass(frozen=True)
class TollEquilibrium:
    m_index: int
    r_m: float
    toll_breakpoints: np.ndarray  # rows of (time, price)
    per_level_queue_delay: np.ndarray
    per_level_cost: np.ndarray
    system_queue_delay: float
    system_cost: float
    fast_share: np.ndarray  # fraction of each level on the fast lane
    levels: np.ndarray
    probs: np.ndarray


def equilibrium_cost(params: BottleneckParams) -> float:
    """c* = beta*gamma/(beta+gamma) * N/s, converted to cost units (rates are per hour)."""
    b, g = params.beta, params.gamma
    return b * g / (b + g) * params.n_commuters / params.s / 60.0


def nom_equilibrium(params: BottleneckParams, vot: VotDistribution) -> NomEquilibrium:
    c = equilibrium_cost(params)
    per_level = vot.levels * c
    return NomEquilibrium(
        c_star=c,
        t_start=params.t_star - 60.0 * c / params.beta,
        t_end=params.t_star + 60.0 * c / params.gamma,
        t_peak=params.t_star - 60.0 * c / params.alpha,
        mean_queue_delay=60.0 * c / (2.0 * params.alpha),
        mean_cost=vot.mean * c,
        per_level_cost=per_level,
    )


def marginal_group(vot: VotDistribution, slow_share: float, tol: float = 1e-12):
    """Index of the marginal VOT group and the fraction of it left on the slow lane.

    When ``slow_share`` falls exactly on a cumulative-probability boundary the
    next group is marginal with ``r_m = 0``.
    """
    cum = np.cumsum(vot.probs)
    above = np.nonzero(cum > slow_share + tol)[0]
    if above.size == 0:
        m = vot.levels.size - 1
        return m, 1.0
    m = int(above[0])
    below = cum[m - 1] if m > 0 else 0.0
    r = (slow_share - below) / vot.probs[m]
    return m, float(min(1.0, max(0.0, r)))


def toll_equilibrium(params: BottleneckParams, vot: VotDistribution) -> TollEquilibrium:
    if params.s_fast >= params.s:
        raise ValueError("tolled benchmark needs a slow lane (s_fast < s)")
    nom = nom_equilibrium(params, vot)
    c = nom.c_star
    delay_nom = nom.mean_queue_delay
    levels, probs = vot.levels, vot.probs
    M = levels.size

    if params.s_fast == 0:
        fast_share = np.zeros(M)
        delay = np.full(M, delay_nom)
        cost = levels * c
        m, r = M - 1, 1.0
    else:
        m, r = marginal_group(vot, params.s_slow / params.s)
        idx = np.arange(M)
        fast_share = np.where(idx > m, 1.0, np.where(idx == m, 1.0 - r, 0.0))
        delay = np.where(idx < m, delay_nom, np.where(idx == m, r * delay_nom, 0.0))
        ratio = params.s / params.s_fast
        cost = np.where(
            idx < m,
            levels * c,
            levels * c * (1.0 - fast_share * 0.5 * ratio * probs),
        )

    breakpoints = _toll_breakpoints(params, levels, probs * fast_share)
    return TollEquilibrium(
        m_index=int(m),
        r_m=float(r),
        toll_breakpoints=breakpoints,
        per_level_queue_delay=delay,
        per_level_cost=cost,
        system_queue_delay=float(probs @ delay),
        system_cost=float(probs @ cost),
        fast_share=fast_share,
        levels=levels,
        probs=probs,
    )


def _toll_breakpoints(params: BottleneckParams, levels, fast_mass) -> np.ndarray:
    """Piecewise-linear optimal toll profile on the fast lane.

    Groups are nested around t*, lowest VOT outermost. Each group's window of
    length ``mass * N / s_fast`` splits gamma/(beta+gamma) before t* and
    beta/(beta+gamma) after it, which keeps every group indifferent across
    its own window and the price continuous.
    """
    b, g = params.beta, params.gamma
    if params.s_fast == 0 or fast_mass.sum() == 0:
        return np.array([[params.t_star, 0.0]])
    lengths = fast_mass * params.n_commuters / params.s_fast
    total = lengths.sum()
    t_start = params.t_star - g / (b + g) * total
    t_end = params.t_star + b / (b + g) * total

    early = [(t_start, 0.0)]
    late = [(t_end, 0.0)]
    for u, ell in zip(levels, lengths):
        if ell == 0:
            continue
        t0, p0 = early[-1]
        t1 = t0 + g / (b + g) * ell
        early.append((t1, p0 + u * b / 60.0 * (t1 - t0)))
        s0, q0 = late[-1]
        s1 = s0 - b / (b + g) * ell
        late.append((s1, q0 + u * g / 60.0 * (s0 - s1)))
    # the innermost segments meet at t*
    pts = early + late[-2::-1]
    return np.array(pts)


def toll_price(te: TollEquilibrium, t):
    """Optimal fast-lane toll at time ``t``; zero outside the fast-lane window."""
    bp = te.toll_breakpoints
    return np.interp(t, bp[:, 0], bp[:, 1], left=0.0, right=0.0)


def queue_delay_profile(params: BottleneckParams, t) -> np.ndarray:
    """Slow-lane queuing delay (minutes) at departure time ``t``.

    NOM and the slow lane under optimal tolling share one profile: both
    queues serve N/s worth of commuters per unit of capacity.
    """
    c = equilibrium_cost(params) * 60.0
    a, b, g, ts = params.alpha, params.beta, params.gamma, params.t_star
    t0, t1, tp = ts - c / b, ts + c / g, ts - c / a
    t = np.asarray(t, dtype=float)
    early = b / (a - b) * (t - t0)
    late = g / (a + g) * (t1 - t)
    out = np.where(t <= tp, early, late)
    return np.where((t < t0) | (t > t1), 0.0, out)


def departure_rate_profile(params: BottleneckParams, capacity: float, t) -> np.ndarray:
    """Departure rate (veh/min) of a queue with service rate ``capacity``."""
    c = equilibrium_cost(params) * 60.0
    a, b, g, ts = params.alpha, params.beta, params.gamma, params.t_star
    t0, t1, tp = ts - c / b, ts + c / g, ts - c / a
    t = np.asarray(t, dtype=float)
    out = np.where(t < tp, capacity * a / (a - b), capacity * a / (a + g))
    return np.where((t < t0) | (t >= t1), 0.0, out)


def toll_fast_windows(params: BottleneckParams, te: TollEquilibrium) -> list[tuple[float, list]]:
    """Fast-lane departure windows of every VOT level, outermost (lowest) first."""
    b, g = params.beta, params.gamma
    if params.s_fast == 0:
        return []
    lengths = te.probs * te.fast_share * params.n_commuters / params.s_fast
    total = lengths.sum()
    lo = params.t_star - g / (b + g) * total
    hi = params.t_star + b / (b + g) * total
    out = []
    for u, ell in zip(te.levels, lengths):
        if ell == 0:
            continue
        e0, l0 = lo, hi
        lo += g / (b + g) * ell
        hi -= b / (b + g) * ell
        out.append((float(u), [(float(e0), float(lo)), (float(hi), float(l0))]))
    return out


def toll_fast_rates(params: BottleneckParams, te: TollEquilibrium, t) -> np.ndarray:
    """Fast-lane departure rate per VOT level at times ``t``, shape (levels, len(t))."""
    t = np.asarray(t, dtype=float)
    rates = np.zeros((te.levels.size, t.size))
    for u, segs in toll_fast_windows(params, te):
        j = int(np.searchsorted(te.levels, u))
        for a, b in segs:
            rates[j] += np.where((t >= a) & (t < b), params.s_fast, 0.0)
    return rates

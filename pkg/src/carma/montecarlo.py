"""Finite-population simulation of the karma bottleneck under a fixed policy.

Each simulated day every agent draws a departure interval and a bid from the
policy, the top bidders of every interval fill the fast lane (ties broken
uniformly at random), fast-lane users pay their bids and the day's payments
are handed back as integer shares. Karma is never capped: agents above the
top level of the policy grid act as if they held exactly ``k_max``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bottleneck import BottleneckParams, queue_profile, trip_cost
from .mdp import CommuterType, Population


@dataclass
class AgentPopulation:
    type_idx: np.ndarray
    urgency_idx: np.ndarray
    karma: np.ndarray
    day: int = 0

    def __post_init__(self):
        self.type_idx = np.asarray(self.type_idx, dtype=np.int64)
        self.urgency_idx = np.asarray(self.urgency_idx, dtype=np.int64)
        self.karma = np.asarray(self.karma, dtype=np.int64)
        if not (self.type_idx.shape == self.urgency_idx.shape == self.karma.shape):
            raise ValueError("per-agent arrays must share one shape")
        if np.any(self.karma < 0):
            raise ValueError("karma must be non-negative")

    @property
    def size(self) -> int:
        return self.karma.size

    @classmethod
    def from_distribution(cls, d: np.ndarray, n_agents: int, rng: np.random.Generator) -> "AgentPopulation":
        """Sample agents from a type-state distribution ``d`` (X, U, K).

        Type counts follow the shares by largest-remainder rounding; urgency
        and karma are drawn from each type's conditional distribution.
        """
        d = np.asarray(d, dtype=float)
        shares = d.sum(axis=(1, 2))
        raw = shares / shares.sum() * n_agents
        counts = np.floor(raw).astype(int)
        extra = n_agents - counts.sum()
        counts[np.argsort(-(raw - counts), kind="stable")[:extra]] += 1
        X, U, K = d.shape
        types, urg, karma = [], [], []
        for x in range(X):
            if counts[x] == 0:
                continue
            p = d[x].ravel() / d[x].sum()
            flat = rng.choice(p.size, size=counts[x], p=p)
            types.append(np.full(counts[x], x))
            urg.append(flat // K)
            karma.append(flat % K)
        return cls(np.concatenate(types), np.concatenate(urg), np.concatenate(karma))


@dataclass(frozen=True)
class DayRecord:
    day: int
    departure: np.ndarray  # interval of every agent
    bid: np.ndarray
    fast: np.ndarray  # bool per agent
    payment_total: int
    slow_inflow: np.ndarray  # vehicles per interval, population scale
    fast_count: np.ndarray  # agents per interval
    queue_delay: np.ndarray  # minutes per interval
    agent_delay: np.ndarray
    agent_cost: np.ndarray
    karma_total: int


def _sampler(probs: np.ndarray):
    """Vectorized categorical sampling from many rows via one sorted key array."""
    rows = probs.reshape(-1, probs.shape[-1])
    cdf = np.cumsum(rows, axis=1)
    tot = cdf[:, -1:]
    cdf = np.divide(cdf, tot, out=np.ones_like(cdf), where=tot > 0)
    cdf[:, -1] = 1.0
    keys = (np.arange(rows.shape[0])[:, None] + cdf).ravel()
    width = rows.shape[1]

    def draw(row: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        r = rng.random(row.size)
        idx = np.searchsorted(keys, row + r, side="right")
        return np.minimum(idx - row * width, width - 1)

    return draw


class _Kit:
    """Per-policy lookup tables reused across days."""

    def __init__(self, pop: Population, pi: np.ndarray, params: BottleneckParams, n_agents: int):
        self.pop = pop
        X, U, K, T, B = pi.shape
        self.shape = (X, U, K, T, B)
        self.k_max = K - 1
        self.action = _sampler(pi.reshape(X, U, K, T * B))
        self.urgency = _sampler(pop.phi)
        self.cap = int(np.floor(params.cap_frac * n_agents + 1e-9))
        self.scale = params.n_commuters / n_agents
        self.times = params.departure_times


def simulate_day(agents: AgentPopulation, pi: np.ndarray, params: BottleneckParams,
                 types: Sequence[CommuterType] | Population, rng: np.random.Generator,
                 _kit: _Kit | None = None) -> DayRecord:
    """Advance ``agents`` by one day in place and return what happened."""
    pop = types if isinstance(types, Population) else Population(types)
    kit = _kit or _Kit(pop, pi, params, agents.size)
    X, U, K, T, B = kit.shape
    n = agents.size
    x, u = agents.type_idx, agents.urgency_idx
    k_eff = np.minimum(agents.karma, kit.k_max)

    a = kit.action((x * U + u) * K + k_eff, rng)
    t, b = a // B, np.minimum(a % B, agents.karma)

    # auction: top `cap` bids of every interval, random order among equal bids
    order = np.lexsort((rng.random(n), -b, t))
    ts = t[order]
    start = np.searchsorted(ts, np.arange(T))
    rank = np.arange(n) - start[ts]
    fast = np.zeros(n, dtype=bool)
    fast[order] = rank < kit.cap

    pay = np.where(fast, b, 0)
    total = int(pay.sum())
    karma = agents.karma - pay
    if n > 0:
        share, rest = divmod(total, n)
        karma += share
        if rest:
            karma[rng.choice(n, size=rest, replace=False)] += 1

    slow_counts = np.bincount(t[~fast], minlength=T)
    fast_counts = np.bincount(t[fast], minlength=T)
    inflow = slow_counts * kit.scale
    q = queue_profile(inflow, params)
    delay = np.where(fast, 0.0, q.delay[t])
    levels = pop.levels[x, u]
    cost = trip_cost(levels, kit.times[t], delay, params)

    agents.karma = karma
    agents.urgency_idx = kit.urgency(x * U + u, rng)
    rec = DayRecord(agents.day, t, b, fast, total, inflow, fast_counts, q.delay,
                    delay, cost, int(karma.sum()))
    agents.day += 1
    return rec


@dataclass
class SimulationResult:
    days: int
    burn_in: int
    mean_queue_delay: float
    mean_cost: float
    per_type_queue_delay: np.ndarray
    per_type_cost: np.ndarray
    karma_histogram: np.ndarray  # (X, U, K) time-averaged empirical distribution
    value_estimate: np.ndarray  # discounted return per starting state, NaN if unseen
    value_stderr: np.ndarray
    value_count: np.ndarray
    daily_queue_delay: np.ndarray = field(default_factory=lambda: np.zeros(0))
    karma_totals: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def empty(self) -> bool:
        return self.days - self.burn_in <= 0


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def simulate(agents: AgentPopulation, pi: np.ndarray, days: int, params: BottleneckParams,
             types: Sequence[CommuterType] | Population, seed: int = 0, burn_in: int = 0,
             discount: float = 0.99, return_horizon: int | None = None) -> SimulationResult:
    """Run ``days`` days; statistics use the days after ``burn_in``.

    The discounted return of every agent is followed from the first
    post-burn-in day for ``return_horizon`` days (default: as many as fit),
    and averaged by the agent's state on that first day.
    """
    pop = types if isinstance(types, Population) else Population(types)
    rng = np.random.default_rng(seed)
    X, U, K = pi.shape[:3]
    kit = _Kit(pop, pi, params, agents.size)
    n = agents.size
    counts = np.bincount(agents.type_idx, minlength=X).astype(float)
    safe = np.where(counts > 0, counts, 1.0)

    hist = np.zeros((X, U, K))
    delay_sum = 0.0
    cost_sum = 0.0
    type_delay = np.zeros(X)
    type_cost = np.zeros(X)
    daily = []
    totals = []
    kept = 0

    horizon = max(days - burn_in, 0) if return_horizon is None else return_horizon
    ret = np.zeros(n)
    start_state = None
    disc = 1.0

    for day in range(days):
        if day == burn_in and horizon > 0:
            start_state = (agents.type_idx.copy(), agents.urgency_idx.copy(),
                           np.minimum(agents.karma, K - 1))
        if day >= burn_in:
            np.add.at(hist, (agents.type_idx, agents.urgency_idx,
                             np.minimum(agents.karma, K - 1)), 1.0)
        rec = simulate_day(agents, pi, params, pop, rng, kit)
        totals.append(rec.karma_total)
        if day < burn_in:
            continue
        kept += 1
        if start_state is not None and day - burn_in < horizon:
            ret -= disc * rec.agent_cost
            disc *= discount
        daily.append(rec.agent_delay.mean())
        delay_sum += rec.agent_delay.mean()
        cost_sum += rec.agent_cost.mean()
        type_delay += np.bincount(agents.type_idx, rec.agent_delay, minlength=X) / safe
        type_cost += np.bincount(agents.type_idx, rec.agent_cost, minlength=X) / safe

    est = np.full((X, U, K), np.nan)
    err = np.full((X, U, K), np.nan)
    cnt = np.zeros((X, U, K), dtype=np.int64)
    if start_state is not None:
        flat = (start_state[0] * U + start_state[1]) * K + start_state[2]
        c = np.bincount(flat, minlength=X * U * K)
        s1 = np.bincount(flat, ret, minlength=X * U * K)
        s2 = np.bincount(flat, ret * ret, minlength=X * U * K)
        seen = c > 0
        mean = np.where(seen, s1 / np.maximum(c, 1), np.nan)
        var = np.where(c > 1, (s2 - c * mean ** 2) / np.maximum(c - 1, 1), np.nan)
        est = mean.reshape(X, U, K)
        err = np.sqrt(np.clip(var, 0, None) / np.maximum(c, 1)).reshape(X, U, K)
        cnt = c.reshape(X, U, K)

    if kept == 0:
        nan = float("nan")
        return SimulationResult(days, burn_in, nan, nan, np.full(X, nan), np.full(X, nan),
                                hist, est, err, cnt, np.zeros(0), np.asarray(totals, dtype=np.int64))
    return SimulationResult(
        days=days, burn_in=burn_in,
        mean_queue_delay=delay_sum / kept, mean_cost=cost_sum / kept,
        per_type_queue_delay=type_delay / kept, per_type_cost=type_cost / kept,
        karma_histogram=hist / hist.sum(), value_estimate=est, value_stderr=err,
        value_count=cnt, daily_queue_delay=np.asarray(daily),
        karma_totals=np.asarray(totals, dtype=np.int64),
    )

"""Discrete-time bottleneck with a free-flow fast lane and a congestible slow lane.

Times are in minutes throughout. Penalty rates ``alpha``, ``beta`` and
``gamma`` are per hour, so every cost divides minute-valued delays by 60.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BottleneckParams:
    n_commuters: float = 9000.0
    s_fast: float = 12.0
    s_slow: float = 48.0
    dt: float = 15.0
    alpha: float = 6.4
    beta: float = 4.0
    gamma: float = 16.0
    t_star: float = 120.0
    n_intervals: int = 11

    def __post_init__(self):
        for problem in self.violations():
            raise ValueError(problem)

    def violations(self) -> list[str]:
        """List every violated invariant (empty when the parameters are valid)."""
        out = []
        if self.n_commuters < 0:
            out.append("n_commuters must be non-negative")
        # s_fast = 0 is allowed: it is the no-fast-lane limit of the tolled benchmark.
        if self.s_fast < 0:
            out.append("s_fast must be non-negative")
        if self.s_slow <= 0:
            out.append("s_slow must be positive")
        if self.dt <= 0:
            out.append("dt must be positive")
        if int(self.n_intervals) != self.n_intervals or self.n_intervals < 1:
            out.append("n_intervals must be a positive integer")
        if not (0 < self.beta < self.alpha < self.gamma):
            out.append("penalty rates must satisfy 0 < beta < alpha < gamma")
        if not (0 <= self.t_star < self.horizon):
            out.append("t_star must lie inside [0, n_intervals * dt)")
        if self.n_intervals * self.s * self.dt < self.n_commuters:
            out.append("horizon too short to serve all commuters")
        return out

    @property
    def s(self) -> float:
        """Total bottleneck capacity (veh/min)."""
        return self.s_fast + self.s_slow

    @property
    def horizon(self) -> float:
        return self.n_intervals * self.dt

    @property
    def departure_times(self) -> np.ndarray:
        """Departure instant of each interval: interval i departs at i * dt."""
        return np.arange(self.n_intervals) * self.dt

    @property
    def cap_frac(self) -> float:
        """Fast-lane capacity per interval as a fraction of the population."""
        if self.n_commuters == 0:
            return 1.0
        return self.s_fast * self.dt / self.n_commuters


@dataclass(frozen=True)
class QueueProfile:
    queue_len: np.ndarray  # vehicles, post-inflow and post-service
    delay: np.ndarray  # minutes


def schedule_delays(t, t_q, params: BottleneckParams):
    """Early and late schedule delay (minutes) for departure ``t`` and queuing delay ``t_q``."""
    t = np.asarray(t, dtype=float)
    t_q = np.asarray(t_q, dtype=float)
    if np.any(t_q < 0):
        raise ValueError("queuing delay must be non-negative")
    arrival = t + t_q
    early = np.maximum(0.0, params.t_star - arrival)
    late = np.maximum(0.0, arrival - params.t_star)
    return early, late


def trip_cost(u, t, t_q, params: BottleneckParams):
    """Generalized cost ``u * (alpha*t_q + beta*t_e + gamma*t_l) / 60``."""
    early, late = schedule_delays(t, t_q, params)
    return u * (params.alpha * np.asarray(t_q, dtype=float)
                + params.beta * early + params.gamma * late) / 60.0


def fast_lane_cost(u, t, params: BottleneckParams):
    """Schedule-delay cost of entering the fast lane at ``t`` (no queue)."""
    if np.any(np.asarray(u) <= 0):
        raise ValueError("VOT multiplier must be positive")
    return trip_cost(u, t, 0.0, params)


def slow_lane_cost(u, t, q, params: BottleneckParams):
    """Cost of entering the slow lane at ``t`` behind a queue of ``q`` vehicles."""
    if np.any(np.asarray(u) <= 0):
        raise ValueError("VOT multiplier must be positive")
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError("queue length must be non-negative")
    return trip_cost(u, t, q / params.s_slow, params)


def queue_profile(slow_inflow, params: BottleneckParams) -> QueueProfile:
    """Point-queue recursion ``q[t] = max(0, q[t-1] + inflow[t] - s_slow*dt)``.

    ``slow_inflow`` is in vehicles per interval.
    """
    inflow = np.asarray(slow_inflow, dtype=float)
    if np.any(inflow < 0):
        raise ValueError("slow-lane inflow must be non-negative")
    service = params.s_slow * params.dt
    q = np.empty_like(inflow)
    prev = 0.0
    for i, x in enumerate(inflow):
        prev = max(0.0, prev + x - service)
        q[i] = prev
    return QueueProfile(queue_len=q, delay=q / params.s_slow)

"""Queuing delay and travel cost of the three schemes, per type and system wide."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .benchmarks import VotDistribution, equilibrium_cost, nom_equilibrium, toll_equilibrium
from .bottleneck import BottleneckParams, trip_cost
from .mdp import CommuterType, Population, SocialContext

SCHEMES = ("NOM", "TOLL", "CARMA")


@dataclass(frozen=True)
class SchemeMetrics:
    scheme: str
    system_queue_delay: float  # minutes
    system_cost: float
    per_type_queue_delay: np.ndarray
    per_type_cost: np.ndarray
    per_type_normalized_cost: np.ndarray
    shares: np.ndarray
    type_names: tuple[str, ...] = ()

    def records(self) -> list[dict]:
        """One row per type plus a trailing ``system`` row."""
        rows = []
        for x, name in enumerate(self.names):
            rows.append({
                "scheme": self.scheme, "type": name, "share": float(self.shares[x]),
                "queue_delay": float(self.per_type_queue_delay[x]),
                "cost": float(self.per_type_cost[x]),
                "normalized_cost": float(self.per_type_normalized_cost[x]),
            })
        rows.append({
            "scheme": self.scheme, "type": "system", "share": 1.0,
            "queue_delay": self.system_queue_delay, "cost": self.system_cost,
            "normalized_cost": float("nan"),
        })
        return rows

    @property
    def names(self) -> tuple[str, ...]:
        if self.type_names:
            return self.type_names
        return tuple(f"tau{x + 1}" for x in range(self.shares.size))


def _pop(types) -> Population:
    return types if isinstance(types, Population) else Population(types)


def _names(pop: Population) -> tuple[str, ...]:
    return tuple(t.name or f"tau{x + 1}" for x, t in enumerate(pop.types))


def type_average_vot(types: Sequence[CommuterType] | Population):
    """Per-type stationary mean VOT and its share-weighted system average."""
    pop = _pop(types)
    per_type = pop.type_average_vot()
    return per_type, float(pop.shares @ per_type)


def pooled_vot(types: Sequence[CommuterType] | Population) -> VotDistribution:
    """Population-wide stationary VOT distribution, used by the closed-form benchmarks."""
    pop = _pop(types)
    probs = pop.shares[:, None] * pop.stationary_u
    return VotDistribution.from_samples(pop.levels[pop.active], probs[pop.active])


def interpolate_queue_delay(delay: np.ndarray, params: BottleneckParams) -> np.ndarray:
    """Delay at each interval's midpoint on the piecewise-linear queue trajectory.

    Grid values are taken at the end of their interval, so the midpoint of
    interval i sits halfway between entries i-1 and i. The first interval
    reuses its own value (no queue history before the horizon).
    """
    delay = np.asarray(delay, dtype=float)
    ends = params.departure_times + params.dt
    return np.interp(ends - params.dt / 2, ends, delay)


def nom_metrics(types: Sequence[CommuterType] | Population, params: BottleneckParams) -> SchemeMetrics:
    pop = _pop(types)
    per_vot, u_bar = type_average_vot(pop)
    nom = nom_equilibrium(params, pooled_vot(pop))
    c = nom.c_star
    X = pop.n_types
    cost = per_vot * c
    return SchemeMetrics(
        scheme="NOM",
        system_queue_delay=nom.mean_queue_delay,
        system_cost=float(pop.shares @ cost),
        per_type_queue_delay=np.full(X, nom.mean_queue_delay),
        per_type_cost=cost,
        per_type_normalized_cost=np.full(X, c),
        shares=pop.shares.copy(),
        type_names=_names(pop),
    )


def _per_type_level_probs(pop: Population, vot: VotDistribution) -> np.ndarray:
    """P_tau[level j] over the pooled level list, shape (X, J)."""
    out = np.zeros((pop.n_types, vot.levels.size))
    for x in range(pop.n_types):
        for u, p in zip(pop.levels[x][pop.active[x]], pop.stationary_u[x][pop.active[x]]):
            out[x, np.searchsorted(vot.levels, u)] += p
    return out


def toll_metrics(types: Sequence[CommuterType] | Population, params: BottleneckParams) -> SchemeMetrics:
    pop = _pop(types)
    vot = pooled_vot(pop)
    te = toll_equilibrium(params, vot)
    w = _per_type_level_probs(pop, vot)
    delay = w @ te.per_level_queue_delay
    cost = w @ te.per_level_cost
    per_vot, _ = type_average_vot(pop)
    return SchemeMetrics(
        scheme="TOLL",
        system_queue_delay=float(pop.shares @ delay),
        system_cost=float(pop.shares @ cost),
        per_type_queue_delay=delay,
        per_type_cost=cost,
        per_type_normalized_cost=cost / per_vot,
        shares=pop.shares.copy(),
        type_names=_names(pop),
    )


def toll_fast_lane_split(types: Sequence[CommuterType] | Population, params: BottleneckParams) -> np.ndarray:
    """Share of the fast-lane users belonging to each type under optimal tolling."""
    pop = _pop(types)
    vot = pooled_vot(pop)
    te = toll_equilibrium(params, vot)
    per_type = pop.shares * (_per_type_level_probs(pop, vot) @ te.fast_share)
    total = per_type.sum()
    return per_type / total if total > 0 else per_type


def carma_fast_lane_split(ctx: SocialContext) -> np.ndarray:
    fast = np.einsum("xtb,tb->x", ctx.nu_by_type, ctx.psi)
    total = fast.sum()
    return fast / total if total > 0 else fast


def carma_metrics(d: np.ndarray, pi: np.ndarray, ctx: SocialContext,
                  types: Sequence[CommuterType] | Population, params: BottleneckParams,
                  interpolate: bool = True) -> SchemeMetrics:
    """Metrics at a karma equilibrium ``(d, pi)`` whose aggregates are ``ctx``.

    With ``interpolate=False`` the cost equals ``-sum d R`` of the game itself.
    """
    pop = _pop(types)
    delay = ctx.queue.delay
    if interpolate:
        delay = interpolate_queue_delay(delay, params)
    times = params.departure_times
    fast_cost = trip_cost(1.0, times, 0.0, params)
    slow_cost = trip_cost(1.0, times, delay, params)
    # nu_xu[x, u, t, b]: action mass by type and urgency
    nu_xu = np.einsum("xuk,xuktb->xutb", d, pi)
    slow = np.einsum("xutb,tb->xt", nu_xu, 1.0 - ctx.psi)
    delay_x = slow @ delay
    unit = ctx.psi * fast_cost[:, None] + (1.0 - ctx.psi) * slow_cost[:, None]
    cost_x = np.einsum("xu,xutb,tb->x", pop.levels, nu_xu, unit)
    shares = pop.shares
    safe = np.where(shares > 0, shares, 1.0)
    per_vot, _ = type_average_vot(pop)
    return SchemeMetrics(
        scheme="CARMA",
        system_queue_delay=float(delay_x.sum()),
        system_cost=float(cost_x.sum()),
        per_type_queue_delay=delay_x / safe,
        per_type_cost=cost_x / safe,
        per_type_normalized_cost=cost_x / safe / per_vot,
        shares=shares.copy(),
        type_names=_names(pop),
    )


def solution_metrics(sol, types, params: BottleneckParams, interpolate: bool = True) -> SchemeMetrics:
    return carma_metrics(sol.d_star, sol.pi_star, sol.context, types, params, interpolate)


def _reduction(ref: float, val: float) -> float:
    return 0.0 if ref == 0 else float(1.0 - val / ref)


def fairness_report(nom: SchemeMetrics, *others: SchemeMetrics) -> list[dict]:
    """Reductions of queue delay and normalized cost relative to NOM, per type and system.

    ``worse_off`` flags a strict increase of either measure over NOM.
    """
    rows = []
    for m in others:
        for x, name in enumerate(m.names):
            dq = _reduction(nom.per_type_queue_delay[x], m.per_type_queue_delay[x])
            dc = _reduction(nom.per_type_normalized_cost[x], m.per_type_normalized_cost[x])
            worse = (m.per_type_queue_delay[x] > nom.per_type_queue_delay[x] + 1e-12
                     or m.per_type_normalized_cost[x] > nom.per_type_normalized_cost[x] + 1e-12)
            rows.append({"scheme": m.scheme, "type": name, "delay_reduction": dq,
                         "normalized_cost_reduction": dc, "worse_off": bool(worse)})
        rows.append({
            "scheme": m.scheme, "type": "system",
            "delay_reduction": _reduction(nom.system_queue_delay, m.system_queue_delay),
            "normalized_cost_reduction": _reduction(nom.system_cost, m.system_cost),
            "worse_off": bool(m.system_cost > nom.system_cost + 1e-12),
        })
    return rows

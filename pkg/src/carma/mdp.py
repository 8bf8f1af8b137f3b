"""The Markov decision process a commuter faces for a frozen social state.

Array conventions, with X types, U urgency levels, K karma levels,
T departure intervals and K bids:

* type-state distribution ``d``: (X, U, K)
* policy ``pi``: (X, U, K, T, K), zero on bids above karma
* rewards ``zeta``: (X, U, T, K); state-action values ``Q``: (X, U, K, T, K)

Types with fewer urgency levels than the widest type are padded with
unreachable absorbing states carrying zero mass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bottleneck import BottleneckParams, QueueProfile, queue_profile, trip_cost
from .mechanism import (
    KarmaGrid,
    action_mass,
    average_payment,
    fast_prob_exact,
    fast_prob_smooth,
    conserving_level,
    karma_transition,
    post_payment,
    redistribution,
    shift_redistribute,
    threshold_bids,
)

ARGMAX_RTOL = 1e-9


@dataclass(frozen=True)
class UrgencyProcess:
    levels: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        levels = np.atleast_1d(np.asarray(self.levels, dtype=float))
        phi = np.atleast_2d(np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "transition", phi)
        if phi.shape != (levels.size, levels.size):
            raise ValueError("transition matrix must be square with one row per level")
        if np.any(levels <= 0):
            raise ValueError("urgency levels must be positive")
        if np.any(phi < 0) or not np.allclose(phi.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition rows must be probability vectors")
        w, _ = np.linalg.eig(phi.T)
        if np.sum(np.abs(w - 1.0) < 1e-9) != 1:
            raise ValueError("urgency chain must have a unique stationary distribution")

    @classmethod
    def iid(cls, levels, probs) -> "UrgencyProcess":
        probs = np.asarray(probs, dtype=float)
        return cls(levels, np.tile(probs, (probs.size, 1)))

    @classmethod
    def constant(cls, level: float) -> "UrgencyProcess":
        return cls([level], [[1.0]])

    def stationary(self) -> np.ndarray:
        w, v = np.linalg.eig(self.transition.T)
        p = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        p = np.abs(p) / np.abs(p).sum()
        return p

    @property
    def mean(self) -> float:
        return float(self.stationary() @ self.levels)


@dataclass(frozen=True)
class CommuterType:
    share: float
    urgency: UrgencyProcess
    name: str = ""


class Population:
    """Commuter types stacked into padded arrays."""

    def __init__(self, types: Sequence[CommuterType]):
        if not types:
            raise ValueError("need at least one commuter type")
        self.types = tuple(types)
        self.shares = np.array([t.share for t in types], dtype=float)
        if np.any(self.shares < 0) or abs(self.shares.sum() - 1.0) > 1e-9:
            raise ValueError("type shares must be non-negative and sum to 1")
        n_u = max(t.urgency.levels.size for t in types)
        X = len(types)
        self.levels = np.ones((X, n_u))
        self.phi = np.zeros((X, n_u, n_u))
        self.active = np.zeros((X, n_u), dtype=bool)
        self.stationary_u = np.zeros((X, n_u))
        for x, t in enumerate(types):
            m = t.urgency.levels.size
            self.levels[x, :m] = t.urgency.levels
            self.levels[x, m:] = t.urgency.levels[-1]
            self.phi[x, :m, :m] = t.urgency.transition
            self.phi[x, m:, m:] = np.eye(n_u - m)
            self.active[x, :m] = True
            self.stationary_u[x, :m] = t.urgency.stationary()

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def n_urgency(self) -> int:
        return self.levels.shape[1]

    def type_average_vot(self) -> np.ndarray:
        return np.sum(self.stationary_u * self.levels, axis=1)


@dataclass(frozen=True)
class SocialContext:
    """Every aggregate a commuter needs from the social state (d, pi)."""

    params: BottleneckParams
    nu: np.ndarray
    nu_by_type: np.ndarray
    psi: np.ndarray  # probability of the fast lane per (t, b)
    b_star: np.ndarray
    p_bar: float
    frac: float
    slow_inflow: np.ndarray  # vehicles per interval
    queue: QueueProfile
    redist_level: float  # karma handed to every commuter, in expectation
    epsilon: float | None = None
    fast_cost: np.ndarray = field(init=False)
    slow_cost: np.ndarray = field(init=False)

    def __post_init__(self):
        times = self.params.departure_times
        object.__setattr__(self, "fast_cost", trip_cost(1.0, times, 0.0, self.params))
        object.__setattr__(self, "slow_cost", trip_cost(1.0, times, self.queue.delay, self.params))

    @classmethod
    def from_state(cls, d, pi, params: BottleneckParams, epsilon: float | None = None,
                   conserve: bool = True):
        """Aggregate (d, pi); ``epsilon=None`` uses the exact allocation rule.

        With ``conserve`` the redistribution compensates for commuters capped
        at the top karma level, so total karma is preserved exactly.
        """
        nu_by_type = np.einsum("xuk,xuktb->xtb", d, pi)
        nu = nu_by_type.sum(axis=0)
        cap = params.cap_frac
        if epsilon is None:
            psi = fast_prob_exact(nu, cap)
        else:
            psi = fast_prob_smooth(nu, cap, epsilon)
        p_bar, frac = average_payment(nu, psi)
        inflow = params.n_commuters * np.sum(nu * (1.0 - psi), axis=1)
        level = p_bar
        if conserve:
            k_max = d.shape[-1] - 1
            fast_w = np.einsum("xuk,xuktb,tb->kb", d, pi, psi)
            slow_w = np.einsum("xuk,xuktb,tb->k", d, pi, 1.0 - psi)
            mass = post_payment(fast_w, slow_w).sum(axis=0)
            level = conserving_level(mass, p_bar, k_max)
        return cls(
            params=params,
            nu=nu,
            nu_by_type=nu_by_type,
            psi=psi,
            b_star=threshold_bids(nu, cap),
            p_bar=p_bar,
            frac=frac,
            slow_inflow=inflow,
            queue=queue_profile(inflow, params),
            redist_level=level,
            epsilon=epsilon,
        )


def reward_table(levels: np.ndarray, ctx: SocialContext) -> np.ndarray:
    """Immediate rewards for every urgency level and action, shape levels.shape + (T, K)."""
    base = ctx.psi * ctx.fast_cost[:, None] + (1.0 - ctx.psi) * ctx.slow_cost[:, None]
    levels = np.asarray(levels, dtype=float)
    return -levels[..., None, None] * base


def immediate_reward(u: float, t: int, b: int, ctx: SocialContext) -> float:
    psi = ctx.psi[t, b]
    return float(-u * (psi * ctx.fast_cost[t] + (1.0 - psi) * ctx.slow_cost[t]))


def karma_kernel(pi: np.ndarray, ctx: SocialContext, k_max: int):
    """Policy-averaged karma transition ``kappa_pi[..., k, k+]``.

    ``pi`` may carry any leading axes before (K, T, K).
    """
    fast_w = np.einsum("...ktb,tb->...kb", pi, ctx.psi)
    slow_w = np.einsum("...ktb,tb->...k", pi, 1.0 - ctx.psi)
    post = post_payment(fast_w, slow_w)
    kernel, _ = shift_redistribute(post, ctx.redist_level, k_max)
    return kernel


def policy_transition(pop: Population, pi: np.ndarray, ctx: SocialContext, k_max: int) -> np.ndarray:
    """State transition ``P[x, u, k, u+, k+]`` under policy ``pi``."""
    kernel = karma_kernel(pi, ctx, k_max)
    return np.einsum("xuv,xukl->xukvl", pop.phi, kernel)


def policy_reward(pop: Population, pi: np.ndarray, ctx: SocialContext) -> np.ndarray:
    zeta = reward_table(pop.levels, ctx)
    return np.einsum("xuktb,xutb->xuk", pi, zeta)


def state_transition_kernel(pop: Population, x: int, u: int, k: int, t: int, b: int,
                            ctx: SocialContext, grid: KarmaGrid) -> np.ndarray:
    """Joint distribution over (u+, k+) after action (t, b) from state (u, k)."""
    kappa, _ = karma_transition(k, b, ctx.psi[t, b], ctx.redist_level, grid)
    return np.outer(pop.phi[x, u], kappa)


def pushforward(d: np.ndarray, P: np.ndarray) -> np.ndarray:
    return np.einsum("xuk,xukvl->xvl", d, P)


def evaluate_value(R: np.ndarray, P: np.ndarray, delta: float, tol: float = 1e-9,
                   method: str = "iterative", v0: np.ndarray | None = None,
                   max_iter: int = 1_000_000) -> np.ndarray:
    """Solve ``V = R + delta * P V`` for a flat state space (R: (S,), P: (S, S))."""
    if not 0 < delta < 1:
        raise ValueError("discount factor must lie in (0, 1)")
    R = np.asarray(R, dtype=float)
    P = np.asarray(P, dtype=float)
    if method == "direct":
        return np.linalg.solve(np.eye(R.size) - delta * P, R)
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")
    V = np.zeros_like(R) if v0 is None else np.array(v0, dtype=float)
    for _ in range(max_iter):
        V_new = R + delta * (P @ V)
        if np.max(np.abs(V_new - V)) <= tol:
            return V_new
        V = V_new
    raise RuntimeError("value iteration did not converge")


def type_values(R: np.ndarray, P: np.ndarray, delta: float, method: str = "direct",
                tol: float = 1e-9, v0=None) -> np.ndarray:
    """Value functions of every type; R: (X, U, K), P: (X, U, K, U, K)."""
    X, U, K = R.shape
    V = np.empty_like(R)
    for x in range(X):
        init = None if v0 is None else v0[x].ravel()
        V[x] = evaluate_value(R[x].ravel(), P[x].reshape(U * K, U * K), delta,
                              tol=tol, method=method, v0=init).reshape(U, K)
    return V


def feasible_mask(n_k: int, n_t: int) -> np.ndarray:
    """Boolean (K, T, K) mask of bids not exceeding karma."""
    ok = np.arange(n_k)[None, :] <= np.arange(n_k)[:, None]
    return np.broadcast_to(ok[:, None, :], (n_k, n_t, n_k))


def q_function(pop: Population, V: np.ndarray, ctx: SocialContext, delta: float,
               k_max: int) -> np.ndarray:
    """State-action values for every (x, u, k, t, b); infeasible bids are ``-inf``."""

    K = k_max + 1
    T = ctx.psi.shape[0]
    zeta = reward_table(pop.levels, ctx)  # (X, U, T, K)
    ev = np.einsum("xuv,xvk->xuk", pop.phi, V)
    lo, hi, f = redistribution(ctx.redist_level)
    idx = np.arange(K)
    W = (1.0 - f) * ev[..., np.minimum(idx + lo, k_max)] + f * ev[..., np.minimum(idx + hi, k_max)]
    after = np.clip(idx[:, None] - idx[None, :], 0, None)  # (k, b) -> k - b
    W_fast = W[..., after]  # (X, U, K, Kb)
    W_slow = W[..., :, None]
    psi = ctx.psi[None, None, None]  # (1,1,1,T,Kb)
    cont = psi * W_fast[:, :, :, None, :] + (1.0 - psi) * W_slow[..., None]
    Q = zeta[:, :, None] + delta * cont
    mask = feasible_mask(K, T)
    return np.where(mask, Q, -np.inf)


def single_q(pop: Population, V, ctx, delta, grid: KarmaGrid, x, u, k, t, b) -> float:
    """Q value of one state-action pair by explicit enumeration of successors."""
    rho = state_transition_kernel(pop, x, u, k, t, b, ctx, grid)
    zeta = immediate_reward(pop.levels[x, u], t, b, ctx)
    return float(zeta + delta * np.sum(rho * V[x]))


def best_response(Q: np.ndarray, rtol: float = ARGMAX_RTOL) -> np.ndarray:
    """Uniform distribution over the (tolerance-widened) argmax set of the last two axes.

    ``Q`` has shape (..., T, B); infeasible entries must be ``-inf``.
    """
    flat = Q.reshape(Q.shape[:-2] + (-1,))
    best = flat.max(axis=-1, keepdims=True)
    thresh = best - rtol * np.maximum(1.0, np.abs(best))
    sel = flat >= thresh
    out = sel / sel.sum(axis=-1, keepdims=True)
    return out.reshape(Q.shape)


def optimality_gaps(Q: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Per-state loss ``max_a Q - sum_a pi Q`` (shape of Q without the action axes)."""
    Qf = np.where(np.isfinite(Q), Q, 0.0)
    best = Q.reshape(Q.shape[:-2] + (-1,)).max(axis=-1)
    return best - np.sum(pi * Qf, axis=(-2, -1))


def stationary_distribution(P: np.ndarray, d0: np.ndarray | None = None, tol: float = 1e-12,
                            max_iter: int = 1_000_000) -> np.ndarray:
    """Left fixed point of a row-stochastic matrix by power iteration (L1 residual <= tol)."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    d = np.full(n, 1.0 / n) if d0 is None else np.asarray(d0, dtype=float) / np.sum(d0)
    for _ in range(max_iter):
        nxt = d @ P
        if np.abs(nxt - d).sum() <= tol:
            return nxt
        d = nxt
    raise RuntimeError("power iteration did not converge")

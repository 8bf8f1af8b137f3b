"""Stationary Nash equilibrium of the karma game.

The iteration alternates a damped policy update towards a (smoothed) best
response with a damped push of the type-state distribution through the
induced Markov chain. Residuals are tracked on a trailing window and the
policy step is cut whenever progress stalls.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from .bottleneck import BottleneckParams
from .mdp import (
    CommuterType,
    Population,
    SocialContext,
    best_response,
    feasible_mask,
    optimality_gaps,
    policy_reward,
    policy_transition,
    pushforward,
    q_function,
    type_values,
)
from .mechanism import KarmaGrid

log = logging.getLogger(__name__)

MASS_FLOOR = 1e-8  # states lighter than this do not count towards the gap


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the equilibrium iteration.

    ``temperature`` switches the response map: 0 gives the uniform best
    response over the argmax set, a positive value a logit response with
    temperature ``temperature * u_bar`` per type (u_bar = type average VOT).
    With a positive temperature, the damped warm-up is followed by an
    Anderson-accelerated solve of the logit fixed point, cooling the
    temperature by ``cooling`` until the optimality gap passes.
    """

    damping_policy: float = 0.05
    damping_dist: float = 0.2
    max_iters: int = 20000
    tol_stationarity: float = 1e-6
    tol_optimality: float = 1e-3
    epsilon: float = 1e-4
    seed: int = 0
    k_max: int = 40
    discount: float = 0.99
    temperature: float = 0.25
    min_temperature: float = 0.02
    cooling: float = 0.8
    dist_steps: int = 4
    epsilon_start: float | None = None
    anneal_iters: int = 200
    window: int = 300
    min_damping: float = 1e-3
    warmup_iters: int = 3000
    anderson_memory: int = 10
    anderson_mixing: float = 0.1
    stage_iters: int = 600
    stage_tol: float = 1e-6
    dist_tol: float = 1e-10
    init_noise: float = 0.0
    clamp_warn: float = 1e-2

    def __post_init__(self):
        bad = self.violations()
        if bad:
            raise ValueError(bad[0])

    def violations(self) -> list[str]:
        out = []
        for name in ("damping_policy", "damping_dist"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                out.append(f"solver.{name} must lie in (0, 1], got {v}")
        for name in ("tol_stationarity", "tol_optimality", "epsilon"):
            if not getattr(self, name) > 0:
                out.append(f"solver.{name} must be positive")
        if self.max_iters < 1:
            out.append("solver.max_iters must be >= 1")
        if self.k_max < 1:
            out.append("solver.k_max must be >= 1")
        if not 0 < self.discount < 1:
            out.append("solver.discount must lie in (0, 1)")
        if self.temperature < 0:
            out.append("solver.temperature must be >= 0")
        if self.min_temperature <= 0:
            out.append("solver.min_temperature must be positive")
        if self.dist_steps < 1:
            out.append("solver.dist_steps must be >= 1")
        if self.epsilon_start is not None and self.epsilon_start < self.epsilon:
            out.append("solver.epsilon_start must be >= solver.epsilon")
        if self.window < 2:
            out.append("solver.window must be >= 2")
        if not 0 < self.min_damping <= 1:
            out.append("solver.min_damping must lie in (0, 1]")
        if not 0 < self.cooling < 1:
            out.append("solver.cooling must lie in (0, 1)")
        if not 0 < self.anderson_mixing <= 1:
            out.append("solver.anderson_mixing must lie in (0, 1]")
        for name in ("warmup_iters", "anderson_memory", "stage_iters"):
            if getattr(self, name) < 0:
                out.append(f"solver.{name} must be >= 0")
        for name in ("stage_tol", "dist_tol"):
            if not getattr(self, name) > 0:
                out.append(f"solver.{name} must be positive")
        if self.init_noise < 0:
            out.append("solver.init_noise must be >= 0")
        return out

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    stationarity: float
    optimality: float
    mean_karma: float
    p_bar: float
    damping: float
    epsilon: float
    temperature: float
    phase: str


@dataclass(frozen=True)
class SneSolution:
    d_star: np.ndarray
    pi_star: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    b_star_profile: np.ndarray
    context: SocialContext
    converged: bool
    iterations: int
    stationarity: float
    optimality: float
    karma_drift: float
    clamp_mass: float
    temperature: float = 0.0
    trace: list[TraceRecord] = field(default_factory=list)

    @property
    def diagnostics(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "stationarity": self.stationarity,
            "optimality": self.optimality,
            "karma_drift": self.karma_drift,
            "clamp_mass": self.clamp_mass,
            "temperature": self.temperature,
        }


def _population(types) -> Population:
    return types if isinstance(types, Population) else Population(types)


def init_social_state(types: Sequence[CommuterType] | Population, grid: KarmaGrid,
                      params: BottleneckParams):
    """Canonical start: karma at k_bar, stationary urgencies, uniform feasible policy."""
    pop = _population(types)
    K, T = grid.n_levels, params.n_intervals
    lo = int(np.floor(grid.k_bar))
    w_hi = grid.k_bar - lo
    karma = np.zeros(K)
    karma[lo] = 1.0 - w_hi
    if w_hi > 0:
        karma[lo + 1] = w_hi
    d = pop.shares[:, None, None] * pop.stationary_u[:, :, None] * karma
    mask = feasible_mask(K, T).astype(float)
    pi = np.broadcast_to(mask / mask.sum(axis=(-2, -1), keepdims=True),
                         (pop.n_types, pop.n_urgency) + mask.shape).copy()
    return d, pi


def logit_response(Q: np.ndarray, temp: np.ndarray) -> np.ndarray:
    """Softmax over the action axes with per-type temperature ``temp`` (X,)."""
    best = Q.max(axis=(-2, -1), keepdims=True)
    z = (Q - best) / temp[:, None, None, None, None]
    w = np.where(np.isfinite(z), np.exp(z), 0.0)
    return w / w.sum(axis=(-2, -1), keepdims=True)


def value_scale(d: np.ndarray, V: np.ndarray) -> float:
    return float(max(np.sum(d * np.abs(V)), 1e-300))


@dataclass
class _Eval:
    ctx: SocialContext
    V: np.ndarray
    Q: np.ndarray
    stat: float
    gap: float


def _evaluate(pop: Population, d, pi, params, eps, delta, k_max) -> _Eval:
    ctx = SocialContext.from_state(d, pi, params, eps)
    P = policy_transition(pop, pi, ctx, k_max)
    V = type_values(policy_reward(pop, pi, ctx), P, delta)
    Q = q_function(pop, V, ctx, delta, k_max)
    stat = float(np.abs(pushforward(d, P) - d).sum())
    heavy = d > MASS_FLOOR
    gap = float(optimality_gaps(Q, pi)[heavy].max()) if heavy.any() else 0.0
    return _Eval(ctx, V, Q, stat, max(gap, 0.0) / value_scale(d, V))


def residuals(d, pi, ctx: SocialContext, pop: Population | Sequence[CommuterType],
              delta: float, k_max: int):
    """(L1 stationarity residual, relative optimality gap) of the social state."""
    pop = _population(pop)
    P = policy_transition(pop, pi, ctx, k_max)
    R = policy_reward(pop, pi, ctx)
    V = type_values(R, P, delta)
    Q = q_function(pop, V, ctx, delta, k_max)
    stat = float(np.abs(pushforward(d, P) - d).sum())
    gaps = optimality_gaps(Q, pi)
    heavy = d > MASS_FLOOR
    gap = float(gaps[heavy].max()) if heavy.any() else 0.0
    return stat, max(gap, 0.0) / value_scale(d, V)


def stationary_for_policy(pop: Population, d, pi, params, eps, k_max, tol=1e-10,
                          max_steps=5000):
    """Push ``d`` through the chain induced by a frozen ``pi`` until it settles."""
    for _ in range(max_steps):
        ctx = SocialContext.from_state(d, pi, params, eps)
        nxt = pushforward(d, policy_transition(pop, pi, ctx, k_max))
        nxt /= nxt.sum()
        res = np.abs(nxt - d).sum()
        d = nxt
        if res <= tol:
            break
    return d


def _epsilon_at(cfg: SolverConfig, n: int) -> float:
    if cfg.epsilon_start is None or n >= cfg.anneal_iters:
        return cfg.epsilon
    frac = n / cfg.anneal_iters
    return float(cfg.epsilon_start * (cfg.epsilon / cfg.epsilon_start) ** frac)


class _Run:
    """Book-keeping shared by both solver phases."""

    def __init__(self, cfg: SolverConfig, k: np.ndarray, callback):
        self.cfg = cfg
        self.k = k
        self.callback = callback
        self.trace: list[TraceRecord] = []
        self.best = None
        self.n = 0
        self.converged = False

    def record(self, d, pi, ev: _Eval, eps, damping, lam, phase) -> bool:
        cfg = self.cfg
        rec = TraceRecord(self.n, ev.stat, ev.gap, float(np.sum(d.sum(axis=(0, 1)) * self.k)),
                          float(ev.ctx.p_bar), damping, eps, lam, phase)
        self.trace.append(rec)
        if self.callback is not None:
            self.callback(rec)
        self.n += 1
        if eps != cfg.epsilon:
            return False
        score = max(ev.stat / cfg.tol_stationarity, ev.gap / cfg.tol_optimality)
        if self.best is None or score < self.best[0]:
            self.best = (score, d, pi, ev, lam)
        if score <= 1.0:
            self.converged = True
        return self.converged

    @property
    def exhausted(self) -> bool:
        return self.n > self.cfg.max_iters


def solve_sne(types: Sequence[CommuterType] | Population, params: BottleneckParams,
              grid: KarmaGrid, config: SolverConfig | None = None,
              init: tuple[np.ndarray, np.ndarray] | None = None,
              callback=None) -> SneSolution:
    """Iterate to a stationary Nash equilibrium; returns the best iterate on failure."""
    cfg = config or SolverConfig(k_max=grid.k_max)
    if cfg.k_max != grid.k_max:
        raise ValueError("solver k_max differs from the karma grid")
    pop = _population(types)
    k_max = grid.k_max
    delta = cfg.discount
    if init is None:
        d, pi = init_social_state(pop, grid, params)
    else:
        d, pi = (np.array(a, dtype=float) for a in init)
    mask = feasible_mask(grid.n_levels, params.n_intervals)
    if cfg.init_noise > 0:
        rng = np.random.default_rng(cfg.seed)
        noise = rng.random(pi.shape) * mask
        pi = (1 - cfg.init_noise) * pi + cfg.init_noise * noise / noise.sum(axis=(-2, -1), keepdims=True)
    u_bar = pop.type_average_vot()
    lam = cfg.temperature
    run = _Run(cfg, grid.levels, callback)

    # phase 1: damped response / pushforward iteration
    eta = cfg.damping_policy
    history: list[float] = []
    n_warm = cfg.max_iters if lam == 0 else min(cfg.warmup_iters, cfg.max_iters)
    for n in range(n_warm + 1):
        eps = _epsilon_at(cfg, n)
        ev = _evaluate(pop, d, pi, params, eps, delta, k_max)
        if run.record(d, pi, ev, eps, eta, lam, "damped") or n == n_warm:
            break
        # cut the policy step when the distribution stops settling
        history.append(ev.stat)
        w = cfg.window
        if eps == cfg.epsilon and len(history) >= 2 * w and len(history) % w == 0:
            if min(history[-w:]) > 0.9 * min(history[-2 * w:-w]):
                eta = max(eta / 2, cfg.min_damping)
                log.debug("iteration %d: policy damping reduced to %g", n, eta)
        target = logit_response(ev.Q, lam * u_bar) if lam > 0 else best_response(ev.Q)
        pi = (1 - eta) * pi + eta * target
        pi = np.where(mask, pi, 0.0)
        pi /= pi.sum(axis=(-2, -1), keepdims=True)
        for _ in range(cfg.dist_steps):
            ctx_d = SocialContext.from_state(d, pi, params, eps)
            nxt = pushforward(d, policy_transition(pop, pi, ctx_d, k_max))
            d = (1 - cfg.damping_dist) * d + cfg.damping_dist * nxt
            d /= d.sum()

    # phase 2: accelerated logit fixed point with temperature continuation
    if not run.converged and lam > 0 and not run.exhausted:
        _continuation(pop, d, pi, lam, u_bar, params, cfg, run, mask)

    _, d, pi, ev, lam_best = run.best
    k = grid.levels
    mean_k = float(np.sum(d.sum(axis=(0, 1)) * k))
    clamp = float(d[..., -1].sum())
    if clamp > cfg.clamp_warn:
        warnings.warn(f"{clamp:.3g} of the population sits at k_max={k_max}; "
                      "consider a larger karma grid", RuntimeWarning, stacklevel=2)
    if not run.converged:
        log.warning("no equilibrium within %d iterations (stationarity %.2e, gap %.2e)",
                    cfg.max_iters, ev.stat, ev.gap)
    return SneSolution(
        d_star=d, pi_star=pi, V=ev.V, Q=ev.Q, b_star_profile=ev.ctx.b_star.copy(),
        context=ev.ctx, converged=run.converged, iterations=run.n - 1,
        stationarity=ev.stat, optimality=ev.gap, karma_drift=mean_k - grid.k_bar,
        clamp_mass=clamp, temperature=lam_best, trace=run.trace,
    )


def _continuation(pop, d, pi, lam, u_bar, params, cfg: SolverConfig, run: _Run, mask):
    eps, delta, k_max = cfg.epsilon, cfg.discount, cfg.k_max
    cool = cfg.cooling
    lam_ok = None  # last temperature whose fixed point was reached
    d = stationary_for_policy(pop, d, pi, params, eps, k_max, cfg.dist_tol)
    while not run.exhausted:
        start = (d, pi)
        status, d, pi = _anderson_stage(pop, d, pi, lam, u_bar, params, cfg, run, mask)
        if status == "converged" or status == "exhausted":
            return
        if status == "fixed":
            lam_ok = lam
        else:
            d, pi = start
            if lam_ok is None:
                return
            cool = np.sqrt(cool)
            if cool > 0.99:
                return
        nxt = (lam_ok if lam_ok is not None else lam) * cool
        if nxt < cfg.min_temperature:
            return
        lam = nxt
        log.debug("response temperature lowered to %g", lam)


def _anderson_stage(pop, d, pi, lam, u_bar, params, cfg: SolverConfig, run: _Run, mask):
    """Anderson mixing on pi -> logit(Q(pi, d(pi))) with d kept stationary."""
    eps, delta, k_max = cfg.epsilon, cfg.discount, cfg.k_max
    beta, m = cfg.anderson_mixing, cfg.anderson_memory
    shape = pi.shape
    X: list[np.ndarray] = []
    F: list[np.ndarray] = []
    for _ in range(cfg.stage_iters):
        if run.exhausted:
            return "exhausted", d, pi
        d = stationary_for_policy(pop, d, pi, params, eps, k_max, cfg.dist_tol)
        ev = _evaluate(pop, d, pi, params, eps, delta, k_max)
        if run.record(d, pi, ev, eps, beta, lam, "anderson"):
            return "converged", d, pi
        f = (logit_response(ev.Q, lam * u_bar) - pi).ravel()
        if np.abs(f).sum() <= cfg.stage_tol:
            return "fixed", d, pi
        x = pi.ravel()
        X.append(x.copy())
        F.append(f)
        X, F = X[-m - 1:], F[-m - 1:]
        step = x + beta * f
        if len(F) > 1:
            dF = np.stack([b - a for a, b in zip(F[:-1], F[1:])], axis=1)
            dX = np.stack([b - a for a, b in zip(X[:-1], X[1:])], axis=1)
            coef = np.linalg.lstsq(dF, f, rcond=None)[0]
            step = step - (dX + beta * dF) @ coef
        pi = np.clip(step.reshape(shape), 0.0, None) * mask
        pi /= pi.sum(axis=(-2, -1), keepdims=True)
    return "failed", d, pi

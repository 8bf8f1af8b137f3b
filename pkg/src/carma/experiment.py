"""Experiment configuration, the scheme runner and its tabular outputs."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml

from .benchmarks import (
    departure_rate_profile,
    queue_delay_profile,
    toll_equilibrium,
    toll_fast_rates,
    toll_price,
)
from .bottleneck import BottleneckParams
from .mdp import CommuterType, Population, SocialContext, UrgencyProcess
from .mechanism import KarmaGrid
from .metrics import (
    SCHEMES,
    SchemeMetrics,
    carma_fast_lane_split,
    carma_metrics,
    fairness_report,
    interpolate_queue_delay,
    nom_metrics,
    pooled_vot,
    toll_fast_lane_split,
    toll_metrics,
)
from .solver import SneSolution, SolverConfig, solve_sne

log = logging.getLogger(__name__)

SOLUTION_SCHEMA = 1
FLOAT_FMT = "{:.12g}"


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class TypeSpec:
    name: str
    share: float
    levels: tuple[float, ...]
    transition: tuple[tuple[float, ...], ...]

    def to_commuter_type(self) -> CommuterType:
        return CommuterType(self.share, UrgencyProcess(np.array(self.levels), np.array(self.transition)),
                            self.name)


@dataclass(frozen=True)
class MonteCarloConfig:
    enabled: bool = False
    n_agents: int = 9000
    days: int = 10000
    burn_in: int = 500
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv",)


@dataclass(frozen=True)
class ExperimentConfig:
    types: tuple[TypeSpec, ...]
    name: str = "experiment"
    bottleneck: BottleneckParams = field(default_factory=BottleneckParams)
    karma: KarmaGrid = field(default_factory=KarmaGrid)
    solver: SolverConfig = field(default_factory=SolverConfig)
    schemes: tuple[str, ...] = SCHEMES
    interpolate: bool = True
    montecarlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def population(self) -> Population:
        return Population([t.to_commuter_type() for t in self.types])

    def with_overrides(self, seed: int | None = None, schemes: Iterable[str] | None = None,
                       out: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, solver=replace(cfg.solver, seed=seed),
                          montecarlo=replace(cfg.montecarlo, seed=seed))
        if schemes is not None:
            cfg = replace(cfg, schemes=tuple(s.upper() for s in schemes))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=str(out)))
        return cfg


# ---------------------------------------------------------------- parsing

_SECTIONS = {"name", "bottleneck", "karma", "types", "solver", "schemes", "interpolate",
             "montecarlo", "output"}


def _unvalidated(cls, values: Mapping[str, Any]):
    """Instance of a self-validating dataclass, built without running its checks."""
    obj = object.__new__(cls)
    for f in fields(cls):
        if f.name in values:
            v = values[f.name]
        elif f.default is not MISSING:
            v = f.default
        else:
            v = f.default_factory()
        object.__setattr__(obj, f.name, v)
    return obj


def _section(raw: Mapping, key: str, cls, problems: list[str], casts: Mapping[str, Any]):
    block = raw.get(key) or {}
    if not isinstance(block, Mapping):
        problems.append(f"{key}: expected a mapping")
        return None
    known = {f.name for f in fields(cls)}
    values = {}
    for k, v in block.items():
        if k not in known:
            problems.append(f"{key}.{k}: unknown field")
            continue
        cast = casts.get(k, float)
        try:
            values[k] = None if v is None else cast(v)
        except (TypeError, ValueError):
            problems.append(f"{key}.{k}: cannot read {v!r}")
    return values


def _int(v):
    if isinstance(v, bool) or float(v) != int(float(v)):
        raise ValueError(v)
    return int(float(v))


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError(v)
    return v


def _parse_types(raw, problems: list[str]) -> list[TypeSpec]:
    items = raw.get("types")
    if not isinstance(items, list) or not items:
        problems.append("types: at least one commuter type is required")
        return []
    out = []
    for i, item in enumerate(items):
        where = f"types[{i}]"
        if not isinstance(item, Mapping):
            problems.append(f"{where}: expected a mapping")
            continue
        extra = set(item) - {"name", "share", "levels", "transition", "probs"}
        for k in sorted(extra):
            problems.append(f"{where}.{k}: unknown field")
        try:
            levels = tuple(float(u) for u in item.get("levels", ()))
            share = float(item.get("share", float("nan")))
        except (TypeError, ValueError):
            problems.append(f"{where}: levels and share must be numbers")
            continue
        if not levels:
            problems.append(f"{where}.levels: need at least one VOT level")
            continue
        if any(u <= 0 or not math.isfinite(u) for u in levels):
            problems.append(f"{where}.levels: VOT levels must be positive")
        if not (share >= 0):
            problems.append(f"{where}.share: must be a non-negative number")
        if "transition" in item and "probs" in item:
            problems.append(f"{where}: give either transition or probs, not both")
            continue
        try:
            if "transition" in item:
                P = np.array(item["transition"], dtype=float)
            elif "probs" in item:
                P = np.tile(np.array(item["probs"], dtype=float), (len(levels), 1))
            elif len(levels) == 1:
                P = np.ones((1, 1))
            else:
                problems.append(f"{where}: transition (or probs) is required")
                continue
        except (TypeError, ValueError):
            problems.append(f"{where}.transition: not a numeric matrix")
            continue
        if P.shape != (len(levels), len(levels)):
            problems.append(f"{where}.transition: expected shape {len(levels)}x{len(levels)}")
            continue
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1) > 1e-9):
            problems.append(f"{where}.transition: rows must be stochastic")
        name = str(item.get("name", f"tau{i + 1}"))
        out.append(TypeSpec(name, share, levels, tuple(tuple(float(p) for p in row) for row in P)))
    if out and all(math.isfinite(t.share) for t in out):
        total = sum(t.share for t in out)
        if abs(total - 1.0) > 1e-9:
            problems.append(f"types: shares sum to {total:.6g}, expected 1")
    names = [t.name for t in out]
    if len(set(names)) != len(names):
        problems.append("types: names must be unique")
    return out


def _collect(raw: Mapping) -> tuple[ExperimentConfig | None, list[str]]:
    problems: list[str] = []
    if not isinstance(raw, Mapping):
        return None, ["config: expected a mapping at the top level"]
    for k in sorted(set(raw) - _SECTIONS):
        problems.append(f"{k}: unknown section")

    bn = _section(raw, "bottleneck", BottleneckParams, problems, {"n_intervals": _int})
    kg = _section(raw, "karma", KarmaGrid, problems, {"k_max": _int})
    sv = _section(raw, "solver", SolverConfig, problems,
                  {n: _int for n in ("max_iters", "seed", "k_max", "dist_steps", "anneal_iters",
                                     "window", "warmup_iters", "anderson_memory", "stage_iters")})
    mc = _section(raw, "montecarlo", MonteCarloConfig, problems,
                  {"enabled": _bool, "n_agents": _int, "days": _int, "burn_in": _int, "seed": _int})
    oc = _section(raw, "output", OutputConfig, problems,
                  {"directory": str, "formats": lambda v: tuple(str(x) for x in v)})
    types = _parse_types(raw, problems)

    if None in (bn, kg, sv, mc, oc):
        return None, problems
    params = _unvalidated(BottleneckParams, bn)
    grid = _unvalidated(KarmaGrid, kg)
    if "k_max" not in sv:
        sv["k_max"] = grid.k_max
    solver = _unvalidated(SolverConfig, sv)
    try:
        problems += [f"bottleneck: {p}" for p in params.violations()]
    except TypeError:
        problems.append("bottleneck: non-numeric values")
    problems += [f"karma: {p}" for p in grid.violations()]
    problems += [p for p in solver.violations()]
    if solver.k_max != grid.k_max:
        problems.append("solver.k_max: must match karma.k_max")
    monte = _unvalidated(MonteCarloConfig, mc)
    if monte.n_agents < 1:
        problems.append("montecarlo.n_agents: must be >= 1")
    if monte.days < 0 or monte.burn_in < 0:
        problems.append("montecarlo.days/burn_in: must be >= 0")
    output = _unvalidated(OutputConfig, oc)
    if set(output.formats) - {"csv"}:
        problems.append("output.formats: only csv is supported")

    schemes = raw.get("schemes", list(SCHEMES))
    if isinstance(schemes, str):
        schemes = [s.strip() for s in schemes.split(",")]
    schemes = tuple(str(s).upper() for s in schemes)
    for s in schemes:
        if s not in SCHEMES:
            problems.append(f"schemes: unknown scheme {s!r}")
    if not schemes:
        problems.append("schemes: need at least one scheme")
    interp = raw.get("interpolate", True)
    if not isinstance(interp, bool):
        problems.append("interpolate: expected true or false")
    if problems:
        return None, problems
    cfg = ExperimentConfig(
        types=tuple(types), name=str(raw.get("name", "experiment")),
        bottleneck=BottleneckParams(**bn), karma=KarmaGrid(**kg), solver=SolverConfig(**sv),
        schemes=schemes, interpolate=interp, montecarlo=MonteCarloConfig(**mc),
        output=OutputConfig(**oc),
    )
    return cfg, []


def validate(raw: Mapping | ExperimentConfig) -> list[str]:
    """All violations of a raw config mapping (empty when it is usable)."""
    if isinstance(raw, ExperimentConfig):
        raw = to_mapping(raw)
    return _collect(raw)[1]


def parse_config(raw: Mapping) -> ExperimentConfig:
    cfg, problems = _collect(raw)
    if problems:
        raise ConfigError(problems)
    return cfg


def to_mapping(cfg: ExperimentConfig) -> dict:
    """Plain nested mapping with every field spelled out (defaults included)."""
    def plain(obj):
        d = asdict(obj)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    return {
        "name": cfg.name,
        "bottleneck": plain(cfg.bottleneck),
        "karma": plain(cfg.karma),
        "types": [{"name": t.name, "share": t.share, "levels": list(t.levels),
                   "transition": [list(r) for r in t.transition]} for t in cfg.types],
        "solver": plain(cfg.solver),
        "schemes": list(cfg.schemes),
        "interpolate": cfg.interpolate,
        "montecarlo": plain(cfg.montecarlo),
        "output": plain(cfg.output),
    }


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_mapping(cfg), sort_keys=False)


def bundled_configs() -> list[str]:
    root = resources.files("carma") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def read_config_mapping(path: str | Path) -> dict:
    """Load YAML from ``path``; a bare bundled name such as ``case1`` also works."""
    p = Path(path)
    if not p.exists() and str(path) in bundled_configs():
        text = (resources.files("carma") / "configs" / f"{path}.yaml").read_text()
    else:
        text = p.read_text()
    data = yaml.safe_load(text)
    return data if data is not None else {}


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(read_config_mapping(path))


# ---------------------------------------------------------------- output

COLUMN_DOCS = {
    "scheme": "NOM, TOLL or CARMA",
    "variant": "closed_form, or raw / interpolated queue delays for CARMA",
    "type": "commuter type name, or system",
    "share": "population share g",
    "queue_delay": "average queuing delay [min]",
    "cost": "average travel cost [cost units]",
    "normalized_cost": "travel cost divided by the type average VOT",
    "delay_reduction": "1 - delay / NOM delay",
    "normalized_cost_reduction": "1 - normalized cost / NOM normalized cost",
    "worse_off": "1 if strictly worse than NOM in either measure",
    "t": "departure time [min]",
    "b_star": "threshold bid [karma]",
    "toll": "optimal fast-lane toll [money]",
    "urgency": "VOT level u",
    "karma": "karma level k",
    "bid": "bid b",
    "prob": "probability",
    "mass": "population mass",
    "lane": "fast or slow",
    "rate": "departure rate [veh/min]",
    "slow_inflow": "vehicles entering the slow lane in the interval",
    "queue_len": "slow-lane queue after the interval [veh]",
    "delay_raw": "queuing delay on the grid [min]",
    "delay_interpolated": "queuing delay after midpoint interpolation [min]",
    "delay_benchmark": "continuous NOM / slow-lane TOLL queuing delay [min]",
    "fast_share": "share of fast-lane users",
    "iteration": "solver iteration",
    "stationarity": "L1 stationarity residual",
    "optimality": "relative optimality gap",
    "mean_karma": "population mean karma",
    "p_bar": "average payment",
    "damping": "policy step (mixing weight in the accelerated phase)",
    "epsilon": "allocation smoothing",
    "temperature": "logit temperature relative to the type average VOT",
    "phase": "damped or anderson",
    "day": "simulated day",
    "karma_total": "total karma after the day",
    "value": "value / discounted-return estimate",
    "stderr": "standard error of the estimate",
    "count": "number of agents",
    "key": "quantity",
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT.format(float(v))
    return str(v)


def write_table(out_dir: Path, name: str, columns: list[str], rows: Iterable[Iterable],
                description: str) -> Path:
    """CSV with a header row plus a ``<name>.schema.json`` sidecar."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{name}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    schema = {
        "table": name,
        "description": description,
        "float_format": "12 significant digits",
        "columns": [{"name": c, "description": COLUMN_DOCS.get(c, "")} for c in columns],
    }
    (out_dir / f"{name}.schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    return path


def _metric_rows(m: SchemeMetrics, variant: str):
    for r in m.records():
        yield [r["scheme"], variant, r["type"], r["share"], r["queue_delay"], r["cost"],
               r["normalized_cost"]]


# ---------------------------------------------------------------- running

@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: dict[str, SchemeMetrics] = field(default_factory=dict)
    solution: SneSolution | None = None
    files: list[Path] = field(default_factory=list)
    fairness: list[dict] = field(default_factory=list)
    montecarlo: Any = None

    @property
    def converged(self) -> bool:
        return self.solution is None or self.solution.converged


def save_solution(path: str | Path, sol: SneSolution, cfg: ExperimentConfig) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        np.savez_compressed(
            fh, schema_version=np.array(SOLUTION_SCHEMA), d_star=sol.d_star, pi_star=sol.pi_star,
            V=sol.V, b_star=sol.b_star_profile,
            config=np.array(json.dumps(to_mapping(cfg), sort_keys=True)),
            diagnostics=np.array(json.dumps(sol.diagnostics, sort_keys=True)),
        )
    return path


@dataclass(frozen=True)
class SavedSolution:
    config: ExperimentConfig
    d_star: np.ndarray
    pi_star: np.ndarray
    V: np.ndarray
    b_star: np.ndarray
    diagnostics: dict

    def context(self) -> SocialContext:
        return SocialContext.from_state(self.d_star, self.pi_star, self.config.bottleneck,
                                        self.config.solver.epsilon)


def load_solution(path: str | Path) -> SavedSolution:
    with np.load(Path(path), allow_pickle=False) as z:
        version = int(z["schema_version"])
        if version != SOLUTION_SCHEMA:
            raise ValueError(f"unsupported solution schema {version}")
        cfg = parse_config(json.loads(str(z["config"])))
        return SavedSolution(cfg, z["d_star"], z["pi_star"], z["V"], z["b_star"],
                             json.loads(str(z["diagnostics"])))


def _carma_tables(out: Path, cfg: ExperimentConfig, pop: Population, d, pi, ctx: SocialContext,
                  files: list[Path]):
    params = cfg.bottleneck
    X, U, K, T, B = pi.shape
    names = [t.name for t in cfg.types]
    times = params.departure_times

    rows = []
    for x, u, k, t, b in zip(*np.nonzero(pi > 1e-12)):
        if d[x, u, k] <= 0 and not pop.active[x, u]:
            continue
        rows.append([names[x], pop.levels[x, u], k, times[t], b, pi[x, u, k, t, b]])
    files.append(write_table(out, "carma_policy", ["type", "urgency", "karma", "t", "bid", "prob"],
                             rows, "equilibrium policy pi*(t, b | u, k) per type (entries > 1e-12)"))

    rows = []
    for x in range(X):
        for u in range(U):
            if not pop.active[x, u]:
                continue
            for k in range(K):
                rows.append([names[x], pop.levels[x, u], k, d[x, u, k]])
    files.append(write_table(out, "carma_distribution", ["type", "urgency", "karma", "mass"], rows,
                             "stationary type-state distribution d*; masses sum to 1"))

    te = toll_equilibrium(params, pooled_vot(pop)) if params.s_fast < params.s else None
    toll = toll_price(te, times) if te is not None else np.zeros(T)
    files.append(write_table(out, "threshold_bids", ["t", "b_star", "toll"],
                             zip(times, ctx.b_star, toll),
                             "threshold bid per departure interval with the optimal toll overlay"))

    rows = []
    nu_xu = np.einsum("xuk,xuktb->xutb", d, pi)
    for x in range(X):
        for u in range(U):
            if not pop.active[x, u]:
                continue
            fast = np.sum(nu_xu[x, u] * ctx.psi, axis=1) * params.n_commuters / params.dt
            slow = np.sum(nu_xu[x, u] * (1 - ctx.psi), axis=1) * params.n_commuters / params.dt
            for t in range(T):
                rows.append(["CARMA", names[x], pop.levels[x, u], times[t], "fast", fast[t]])
                rows.append(["CARMA", names[x], pop.levels[x, u], times[t], "slow", slow[t]])
    if te is not None:
        fine = np.arange(0.0, params.horizon + 1e-9, 1.0)
        slow = departure_rate_profile(params, params.s_slow, fine)
        fast = toll_fast_rates(params, te, fine)
        for i, t in enumerate(fine):
            rows.append(["TOLL", "all", "all", t, "slow", slow[i]])
            for j, u in enumerate(te.levels):
                rows.append(["TOLL", "all", u, t, "fast", fast[j, i]])
    files.append(write_table(out, "departure_rates", ["scheme", "type", "urgency", "t", "lane", "rate"],
                             rows, "departure rates per lane; CARMA per interval, TOLL on a 1-minute grid"))

    bench = queue_delay_profile(params, times)
    files.append(write_table(
        out, "queue_delay", ["t", "slow_inflow", "queue_len", "delay_raw", "delay_interpolated",
                             "delay_benchmark"],
        zip(times, ctx.slow_inflow, ctx.queue.queue_len, ctx.queue.delay,
            interpolate_queue_delay(ctx.queue.delay, params), bench),
        "slow-lane queue over the morning"))

    split = carma_fast_lane_split(ctx)
    tsplit = toll_fast_lane_split(pop, params) if te is not None else np.zeros(X)
    rows = [["CARMA", names[x], split[x]] for x in range(X)]
    rows += [["TOLL", names[x], tsplit[x]] for x in range(X)]
    files.append(write_table(out, "fast_lane_split", ["scheme", "type", "fast_share"], rows,
                             "composition of fast-lane users by type"))


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, quiet: bool = True,
        solution: SneSolution | None = None) -> RunResult:
    """Compute every requested scheme and write the output bundle."""
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    pop = cfg.population()
    params = cfg.bottleneck
    res = RunResult(cfg)
    if "NOM" in cfg.schemes or "TOLL" in cfg.schemes or "CARMA" in cfg.schemes:
        res.metrics["NOM"] = nom_metrics(pop, params)
    if "TOLL" in cfg.schemes:
        res.metrics["TOLL"] = toll_metrics(pop, params)

    rows = []
    if "NOM" in cfg.schemes:
        rows += list(_metric_rows(res.metrics["NOM"], "closed_form"))
    if "TOLL" in cfg.schemes:
        rows += list(_metric_rows(res.metrics["TOLL"], "closed_form"))

    if "CARMA" in cfg.schemes:
        sol = solution
        if sol is None:
            progress = None if quiet else _progress
            sol = solve_sne(pop, params, cfg.karma, cfg.solver, callback=progress)
        res.solution = sol
        raw = carma_metrics(sol.d_star, sol.pi_star, sol.context, pop, params, interpolate=False)
        interp = carma_metrics(sol.d_star, sol.pi_star, sol.context, pop, params, interpolate=True)
        res.metrics["CARMA"] = interp if cfg.interpolate else raw
        rows += list(_metric_rows(interp, "interpolated"))
        rows += list(_metric_rows(raw, "raw"))
        _carma_tables(out, cfg, pop, sol.d_star, sol.pi_star, sol.context, res.files)
        res.files.append(write_table(
            out, "solver_trace",
            ["iteration", "stationarity", "optimality", "mean_karma", "p_bar", "damping", "epsilon",
             "temperature", "phase"],
            ([r.iteration, r.stationarity, r.optimality, r.mean_karma, r.p_bar, r.damping, r.epsilon,
              r.temperature, r.phase] for r in sol.trace),
            "one record per solver iteration"))
        res.files.append(save_solution(out / "solution.npz", sol, cfg))

    res.files.insert(0, write_table(
        out, "metrics", ["scheme", "variant", "type", "share", "queue_delay", "cost", "normalized_cost"],
        rows, "system and per-type performance of every scheme"))

    others = [res.metrics[s] for s in ("TOLL", "CARMA") if s in res.metrics]
    if others:
        res.fairness = fairness_report(res.metrics["NOM"], *others)
        res.files.append(write_table(
            out, "fairness", ["scheme", "type", "delay_reduction", "normalized_cost_reduction", "worse_off"],
            ([r["scheme"], r["type"], r["delay_reduction"], r["normalized_cost_reduction"], r["worse_off"]]
             for r in res.fairness),
            "reductions relative to NOM"))

    if cfg.montecarlo.enabled and res.solution is not None:
        res.montecarlo = run_montecarlo(cfg, res.solution.d_star, res.solution.pi_star, out, res.files)

    summary = {
        "name": cfg.name,
        "schemes": list(cfg.schemes),
        "converged": res.converged,
        "solver": res.solution.diagnostics if res.solution is not None else None,
        "config": to_mapping(cfg),
        "files": sorted(p.name for p in res.files),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return res


def run_montecarlo(cfg: ExperimentConfig, d, pi, out: Path, files: list[Path]):
    from .montecarlo import AgentPopulation, simulate

    mc = cfg.montecarlo
    pop = cfg.population()
    rng = np.random.default_rng(mc.seed)
    agents = AgentPopulation.from_distribution(d, mc.n_agents, rng)
    res = simulate(agents, pi, mc.days, cfg.bottleneck, pop, seed=mc.seed + 1,
                   burn_in=mc.burn_in, discount=cfg.solver.discount)
    names = [t.name for t in cfg.types]
    rows = [["mean_queue_delay", res.mean_queue_delay], ["mean_cost", res.mean_cost]]
    rows += [[f"queue_delay:{names[x]}", v] for x, v in enumerate(res.per_type_queue_delay)]
    rows += [[f"cost:{names[x]}", v] for x, v in enumerate(res.per_type_cost)]
    files.append(write_table(out, "montecarlo_summary", ["key", "value"], rows,
                             "time averages after burn-in"))
    X, U, K = d.shape
    rows = []
    for x in range(X):
        for u in range(U):
            if not pop.active[x, u]:
                continue
            for k in range(K):
                rows.append([names[x], pop.levels[x, u], k, res.karma_histogram[x, u, k],
                             res.value_estimate[x, u, k], res.value_stderr[x, u, k],
                             res.value_count[x, u, k]])
    files.append(write_table(out, "montecarlo_states",
                             ["type", "urgency", "karma", "mass", "value", "stderr", "count"], rows,
                             "empirical state distribution and discounted-return estimates"))
    days = np.arange(res.burn_in, res.days)
    files.append(write_table(out, "montecarlo_days", ["day", "queue_delay", "karma_total"],
                             zip(days, res.daily_queue_delay, res.karma_totals[res.burn_in:]),
                             "per-day record after burn-in"))
    return res


def _progress(rec):
    if rec.iteration % 250 == 0:
        log.info("iter %5d  stat %.2e  gap %.2e  p_bar %.3f  temp %.3g  %s", rec.iteration,
                 rec.stationarity, rec.optimality, rec.p_bar, rec.temperature, rec.phase)

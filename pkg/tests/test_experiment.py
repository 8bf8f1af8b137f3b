import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from carma import cli, experiment
from carma.bottleneck import BottleneckParams
from carma.experiment import (
    ConfigError,
    bundled_configs,
    dump_config,
    load_config,
    load_solution,
    parse_config,
    read_config_mapping,
    run,
    to_mapping,
    validate,
    write_table,
)

SMALL_RAW = {
    "name": "small",
    "bottleneck": {"n_commuters": 3000, "t_star": 45, "n_intervals": 4},
    "karma": {"k_bar": 4, "k_max": 16},
    "types": [{"name": "a", "share": 1.0, "levels": [1, 6], "probs": [0.8, 0.2]}],
}


def small(**solver):
    raw = json.loads(json.dumps(SMALL_RAW))
    if solver:
        raw["solver"] = solver
    return raw


def write_yaml(path: Path, raw) -> Path:
    path.write_text(yaml.safe_dump(raw))
    return path


def test_bundled_configs():
    assert bundled_configs() == ["case1", "case2", "case3"]
    for name in bundled_configs():
        assert validate(read_config_mapping(name)) == []
        cfg = load_config(name)
        assert cfg.bottleneck == BottleneckParams()
        assert cfg.karma.k_bar == 10 and cfg.karma.k_max == 40
        assert cfg.solver.epsilon == 1e-4 and cfg.solver.discount == 0.99


def test_bundled_type_blocks():
    c1 = load_config("case1")
    assert [t.levels for t in c1.types] == [(1.0, 6.0)]
    assert c1.types[0].transition == ((0.8, 0.2), (0.8, 0.2))
    c2 = load_config("case2")
    assert [(t.name, t.share, t.levels) for t in c2.types] == [
        ("low_income", 0.8, (1.0,)), ("high_income", 0.2, (6.0,))]
    c3 = load_config("case3")
    assert [t.levels for t in c3.types] == [(1.0, 11.0), (1.0, 6.0), (1.0, 3.0), (2.0,)]
    assert [t.transition[0][1] for t in c3.types[:3]] == [0.1, 0.2, 0.5]
    assert all(t.share == 0.25 for t in c3.types)


def test_minimal_config_gets_defaults():
    cfg = parse_config({"types": [{"share": 1, "levels": [2]}]})
    assert cfg.bottleneck == BottleneckParams()
    assert cfg.schemes == ("NOM", "TOLL", "CARMA")
    assert cfg.types[0].name == "tau1"


def test_validation_messages():
    bad_shares = {"types": [{"share": 0.5, "levels": [1]}, {"share": 0.4, "levels": [2]}]}
    problems = validate(bad_shares)
    assert any(p.startswith("types:") and "0.9" in p for p in problems)
    neg_beta = {"bottleneck": {"beta": -4}, "types": [{"share": 1, "levels": [1]}]}
    assert any("beta" in p and p.startswith("bottleneck") for p in validate(neg_beta))
    with pytest.raises(ConfigError) as err:
        parse_config(bad_shares)
    assert err.value.problems == problems


@pytest.mark.parametrize("raw, fragment", [
    ({"types": []}, "types"),
    ({"types": [{"share": 1, "levels": [1, 2], "transition": [[0.5, 0.6], [1, 0]]}]}, "stochastic"),
    ({"types": [{"share": 1, "levels": [1, 2]}]}, "transition"),
    ({"types": [{"share": 1, "levels": [-1]}]}, "positive"),
    ({"types": [{"share": 1, "levels": [1]}], "bottleneck": {"speed": 3}}, "unknown field"),
    ({"types": [{"share": 1, "levels": [1]}], "extras": 1}, "unknown section"),
    ({"types": [{"share": 1, "levels": [1]}], "karma": {"k_max": 5, "k_bar": 10}}, "karma"),
    ({"types": [{"share": 1, "levels": [1]}], "solver": {"damping_policy": 2}}, "damping_policy"),
    ({"types": [{"share": 1, "levels": [1]}], "schemes": ["NOM", "FOO"]}, "FOO"),
    ({"types": [{"share": 1, "levels": [1]}], "montecarlo": {"days": 1.5}}, "montecarlo.days"),
    ({"types": [{"share": 1, "levels": [1]}], "bottleneck": {"n_intervals": 2}}, "horizon"),
])
def test_violations(raw, fragment):
    problems = validate(raw)
    assert problems and any(fragment in p for p in problems), problems


def test_round_trip():
    for name in bundled_configs():
        cfg = load_config(name)
        assert parse_config(to_mapping(cfg)) == cfg
        assert parse_config(yaml.safe_load(dump_config(cfg))) == cfg
        assert validate(cfg) == []


def test_overrides():
    cfg = load_config("case1").with_overrides(seed=5, schemes=["nom"], out="x")
    assert cfg.solver.seed == 5 and cfg.montecarlo.seed == 5
    assert cfg.schemes == ("NOM",) and cfg.output.directory == "x"


def test_write_table_format(tmp_path):
    path = write_table(tmp_path, "t", ["a", "b", "c"], [[1 / 3, 7, True]], "demo")
    assert path.read_text() == "a,b,c\n0.333333333333,7,1\n"
    schema = json.loads((tmp_path / "t.schema.json").read_text())
    assert [c["name"] for c in schema["columns"]] == ["a", "b", "c"]
    assert schema["description"] == "demo"


def test_nom_only_run_skips_solver(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("solver must not run")

    monkeypatch.setattr(experiment, "solve_sne", boom)
    cfg = load_config("case1").with_overrides(schemes=["NOM"])
    res = run(cfg, tmp_path)
    assert res.solution is None
    assert sorted(p.name for p in tmp_path.glob("*.csv")) == ["metrics.csv"]
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[-1] == "NOM,closed_form,system,1,37.5,16,nan"


def test_case1_benchmark_reductions(tmp_path):
    res = run(load_config("case1").with_overrides(schemes=["NOM", "TOLL"]), tmp_path)
    row = next(r for r in res.fairness if r["type"] == "system")
    assert row["delay_reduction"] == pytest.approx(0.2, rel=1e-12)
    assert row["normalized_cost_reduction"] == pytest.approx(0.3, rel=1e-12)


def test_small_run_bundle_is_byte_identical(tmp_path):
    cfg = parse_config(small())
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n
    for table in ("metrics", "fairness", "carma_policy", "carma_distribution", "threshold_bids",
                  "departure_rates", "queue_delay", "fast_lane_split", "solver_trace"):
        assert (tmp_path / "a" / f"{table}.csv").exists()
        assert (tmp_path / "a" / f"{table}.schema.json").exists()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["converged"] is True


def test_saved_solution_round_trip(tmp_path):
    cfg = parse_config(small())
    res = run(cfg, tmp_path)
    saved = load_solution(tmp_path / "solution.npz")
    assert saved.config == cfg
    np.testing.assert_array_equal(saved.d_star, res.solution.d_star)
    np.testing.assert_array_equal(saved.pi_star, res.solution.pi_star)
    assert saved.diagnostics["converged"] is True
    np.testing.assert_array_equal(saved.context().b_star, res.solution.b_star_profile)


def test_departure_rates_cover_everyone(tmp_path):
    cfg = parse_config(small())
    run(cfg, tmp_path)
    lines = (tmp_path / "departure_rates.csv").read_text().splitlines()[1:]
    carma = [l.split(",") for l in lines if l.startswith("CARMA")]
    total = sum(float(r[-1]) for r in carma) * cfg.bottleneck.dt
    assert total == pytest.approx(cfg.bottleneck.n_commuters, rel=1e-9)


# ---------------------------------------------------------------- CLI

def test_cli_validate(capsys):
    assert cli.main(["validate", "--config", "case2"]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_cli_invalid_config(tmp_path, capsys):
    path = write_yaml(tmp_path / "bad.yaml", {"types": [{"share": 0.9, "levels": [1]}]})
    assert cli.main(["validate", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "types" in capsys.readouterr().err


def test_cli_missing_config(tmp_path):
    assert cli.main(["validate", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_IO


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    code = cli.main(["benchmark", "--config", "case1", "--out", str(blocker / "sub"), "--quiet"])
    assert code == cli.EXIT_IO


def test_cli_benchmark_and_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["benchmark", "--config", "case1", "--quiet"]) == cli.EXIT_OK
    assert (tmp_path / "env" / "metrics.csv").exists()
    # --out wins over the environment
    assert cli.main(["benchmark", "--config", "case1", "--quiet", "--out", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "metrics.csv").exists()


def test_cli_scheme_subset(tmp_path):
    assert cli.main(["run", "--config", "case2", "--scheme", "nom,toll", "--quiet",
                     "--out", str(tmp_path)]) == cli.EXIT_OK
    text = (tmp_path / "metrics.csv").read_text()
    assert "TOLL" in text and "CARMA" not in text


def test_cli_non_convergence(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", small(max_iters=3, warmup_iters=3))
    code = cli.main(["solve", "--config", str(path), "--quiet", "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_DIVERGED
    assert (tmp_path / "o" / "solution.npz").exists()


def test_cli_solve_then_simulate(tmp_path):
    path = write_yaml(tmp_path / "c.yaml", small())
    out = tmp_path / "o"
    assert cli.main(["solve", "--config", str(path), "--quiet", "--out", str(out)]) == cli.EXIT_OK
    code = cli.main(["simulate", "--config", str(path), "--solution", str(out / "solution.npz"),
                     "--days", "50", "--quiet", "--out", str(tmp_path / "mc")])
    assert code == cli.EXIT_OK
    rows = dict(l.split(",") for l in (tmp_path / "mc" / "montecarlo_summary.csv").read_text().splitlines()[1:])
    assert np.isfinite(float(rows["mean_queue_delay"]))
    days = (tmp_path / "mc" / "montecarlo_days.csv").read_text().splitlines()[1:]
    assert len(days) == 45  # burn-in shortened to a tenth of the run
    assert len({l.split(",")[2] for l in days}) == 1  # total karma constant

import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from adastrat.cli import main
from adastrat.experiments import (CSV_HEADER, ConfigError, ExperimentConfig, ResultRow, emit_csv,
                                  format_rows, load_configs, run_experiment)
from adastrat.tables import table_configs

SMALL = ["--strata", "5", "--draws", "200", "--iters", "3", "--reps", "2"]


def _rows(text):
    return list(csv.reader(io.StringIO(text)))


def _row(**kw):
    base = dict(model="asian", params="K=45;vol=0.1", drift="none", method="mc", direction="none",
                allocation="-", price=6.0512345678, variance=0.80312345, seed=0, I=100, M=20000, N=200)
    base.update(kw)
    return ResultRow(**base)


# --- CSV ---------------------------------------------------------------------------

def test_header_and_single_row(tmp_path):
    path = tmp_path / "out.csv"
    emit_csv([_row()], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[0] == "model,params,drift,method,direction,allocation,price,variance,seed,I,M,N"


def test_round_trip_six_significant_digits():
    row = _row(price=1234.56789, variance=1.23456789e-5)
    parsed = _rows(format_rows([row]))[1]
    rec = dict(zip(CSV_HEADER, parsed))
    assert float(rec["price"]) == pytest.approx(row.price, rel=5e-6)
    assert float(rec["variance"]) == pytest.approx(row.variance, rel=5e-6)
    assert rec["params"] == "K=45;vol=0.1"
    assert int(rec["M"]) == 20000


def test_emit_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "x.csv")


def test_emit_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        emit_csv([_row()], tmp_path / "missing" / "x.csv")


# --- config validation ---------------------------------------------------------------

@pytest.mark.parametrize("kw,field", [
    (dict(I=1), "I"),
    (dict(model="linear", params={"d": 2}, m=2), "m"),
    (dict(floor=0.01), "floor"),
    (dict(method="adapt", direction="reg"), "direction"),
    (dict(method="mc", direction="star"), "direction"),
    (dict(method="strat-fixed", direction="adapt"), "direction"),
    (dict(model="nope"), "model"),
    (dict(model="heston", drift="optimal", method="mc", direction="none"), "drift"),
    (dict(model="heston", method="strat-fixed", direction="l"), "direction"),
    (dict(params={"bogus": 1.0}), "params.bogus"),
])
def test_config_rejections(kw, field):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(**kw)
    assert info.value.field == field


def test_custom_direction_must_be_orthonormal(tmp_path):
    good = tmp_path / "good.txt"
    np.savetxt(good, np.eye(16)[:, :1])
    bad = tmp_path / "bad.txt"
    np.savetxt(bad, np.full((16, 1), 0.3))
    (cfg,) = load_configs(f"[ok]\nmethod = strat-fixed\ndirection = custom={good}\n", is_text=True)
    assert cfg.direction_matrix.shape == (16, 1)
    with pytest.raises(ConfigError) as info:
        load_configs(f"[broken]\nmethod = strat-fixed\ndirection = custom={bad}\n", is_text=True)
    assert info.value.field == "broken.direction"


def test_field_paths_in_sections():
    text = "[first]\nmodel = asian\nvol = 0.5\n\n[second]\nmodel = asian\nvol = abc\n"
    with pytest.raises(ConfigError) as info:
        load_configs(text, is_text=True)
    assert info.value.field == "second.params.vol"


def test_sections_parsed_in_order():
    text = ("[a]\nmodel = barrier\nK = 50\nB = 80\nmethod = mc\ndirection = none\n\n"
            "[b]\nmodel = basket\nc = 0.9\nmethod = strat-fixed\ndirection = l\nallocation = prop\n")
    a, b = load_configs(text, is_text=True)
    assert a.name == "a" and a.params == {"K": 50.0, "B": 80.0}
    assert b.params["c"] == 0.9 and b.allocation == "prop"


def test_explicit_drift_vector():
    (cfg,) = load_configs("[v]\nmodel = linear\nd = 2\ndrift = 0.1, -0.2\nmethod = mc\n", is_text=True)
    assert cfg.drift == "vector" and np.allclose(cfg.drift_vector, [0.1, -0.2])
    with pytest.raises(ConfigError):
        load_configs("[v]\nmodel = linear\nd = 2\ndrift = 0.1\nmethod = mc\n", is_text=True)


# --- experiments ---------------------------------------------------------------------------

def test_analytic_mc_variance():
    cfg = ExperimentConfig(model="linear", params={"d": 2}, method="mc", direction="none",
                           M=20000, N=10, seed=3)
    (row,) = run_experiment(cfg)
    assert row.variance == pytest.approx(2.0, rel=0.03)
    assert abs(row.price) < 4 * np.sqrt(2.0 / 200_000)


def test_rerun_is_byte_identical(tmp_path):
    text = ("[mc]\nmodel = exponential\nd = 3\nmethod = mc\ndirection = none\nM = 500\nN = 4\nreps = 2\n\n"
            "[fixed]\nmodel = exponential\nd = 3\nmethod = strat-fixed\ndirection = reg\nallocation = opt\n"
            "I = 5\nM = 500\nN = 4\nreps = 2\n\n"
            "[latin]\nmodel = exponential\nd = 3\nmethod = lhs\ndirection = adapt\nI = 5\nM = 500\nN = 4\n")
    outs = []
    for k in range(2):
        rows = [r for cfg in load_configs(text, is_text=True) for r in run_experiment(cfg)]
        emit_csv(rows, tmp_path / f"run{k}.csv")
        outs.append((tmp_path / f"run{k}.csv").read_bytes())
    assert outs[0] == outs[1]


def test_parallel_replications_match_serial():
    cfg = ExperimentConfig(model="exponential", params={"d": 3}, method="strat-fixed", direction="reg",
                           allocation="prop", I=5, M=300, N=3, reps=3, seed=1)
    assert run_experiment(cfg) == run_experiment(cfg, jobs=2)


@pytest.mark.parametrize("name,count", [("asian", 80), ("1", 80), ("asian-lhs", 40), ("barrier", 32),
                                        ("basket", 48), ("heston", 24), ("heston-lhs", 18)])
def test_table_sizes(name, count):
    assert len(table_configs(name)) == count


def test_table_row_layout():
    configs = table_configs("asian", only={"vol": 0.1, "K": 45.0})
    assert len(configs) == 16
    head = [(c.drift, c.method, c.direction, c.allocation) for c in configs[:8]]
    assert head[0][1] == "mc"
    assert [h[2] for h in head[1:4]] == ["reg", "star", "l"] and head[1][3] == "prop"
    assert head[4][1:] == ("adapt", "adapt", "opt")


# --- command line ------------------------------------------------------------------------------

def test_price_command_writes_csv(capsys):
    assert main(["price", "--model", "linear", "--param", "d=2", "--draws", "1000", "--iters", "5"]) == 0
    rows = _rows(capsys.readouterr().out)
    assert rows[0] == CSV_HEADER and len(rows) == 2
    assert rows[1][3] == "mc"


def test_price_config_file(tmp_path, capsys):
    ini = tmp_path / "exp.ini"
    ini.write_text("[one]\nmodel = linear\nd = 2\nmethod = mc\ndirection = none\nM = 100\nN = 2\n\n"
                   "[two]\nmodel = quadratic\nd = 2\nmethod = strat-fixed\ndirection = reg\n"
                   "allocation = prop\nI = 4\nM = 100\nN = 2\n", encoding="utf-8")
    out = tmp_path / "res.csv"
    assert main(["price", "--config", str(ini), "--section", "one", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_config_error_exit_code(capsys):
    assert main(["price", "--model", "asian", "--strata", "1", "--method", "adapt",
                 "--direction", "adapt"]) == 2
    assert "I" in capsys.readouterr().err


def test_unknown_table_exit_code():
    assert main(["table", "nope"]) == 2


def test_non_finite_drift_is_config_error():
    assert main(["adapt", "--model", "quadratic", "--param", "d=2", "--strata", "2", "--draws", "10",
                 "--iters", "1", "--drift", "nan,0"]) == 2


def test_degeneracy_exit_code(capsys):
    # the knocked-out payoff is zero everywhere, so no feasible drift exists
    assert main(["drift", "--model", "knockout", "--param", "K=1e9", "--param", "B=1"]) == 3
    assert "degeneracy" in capsys.readouterr().err


def test_adapt_trace(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    assert main(["adapt", "--model", "linear", "--param", "d=3", *SMALL, "--trace", str(trace)]) == 0
    rows = _rows(trace.read_text())
    assert rows[0][:6] == ["t", "estimate", "average", "variance", "step_angle", "degenerate"]
    assert rows[0][6:] == ["mu_1", "mu_2", "mu_3"]
    assert len(rows) == 4
    out = _rows(capsys.readouterr().out)
    assert out[1][3:6] == ["adapt", "adapt", "opt"]


def test_drift_command(capsys):
    assert main(["drift", "--model", "barrier", "--param", "K=50", "--param", "B=60"]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first.startswith("norm ")
    assert float(first.split()[1]) == pytest.approx(0.84, abs=0.01)


def test_table_command_small(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["table", "barrier", "--only", "B=80", "--reps", "1", "--strata", "5", "--draws", "300",
                 "--iters", "2", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1 + 16


def test_oracle_command(tmp_path, capsys):
    out = tmp_path / "oracle.txt"
    assert main(["oracle", "--out", str(out)]) == 0
    assert "FAIL" not in out.read_text()


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "adastrat.cli", "price", "--model", "linear",
                          "--param", "d=2", "--draws", "100", "--iters", "2"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert res.stdout.splitlines()[0] == ",".join(CSV_HEADER)

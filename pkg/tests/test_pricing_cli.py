import dataclasses
import json
import math

import pytest

from pint_american import cli
from pint_american.config import (ConfigError, build_config,
                                  parse_config_text)
from pint_american.experiments import (convergence_sweep, iteration_matrix,
                                       iteration_matrix_csv, observed_orders, run_example,
                                       sigma_sweep, solve)
from pint_american.reports import CSV_COLUMNS, SolveReport, emit_report, read_csv_rows

SMALL = {"ns": 40, "nt": (4, 8, 16)}


# --- config ----------------------------------------------------------------------

def test_example_presets():
    c1 = build_config(1)
    assert (c1.K, c1.T, c1.sigma, c1.r, c1.s_max, c1.eval_point) == (100.0, 1.0, 0.15, 0.03,
                                                                   300.0, 100.0)
    assert c1.reference == 4.820608
    c2 = build_config(2)
    assert c2.eval_point == (127.68, 99.43) and c2.rho == 0.6
    assert c2.T == pytest.approx(122 / 365) and c2.reference == 6.932875
    c3 = build_config(3)
    assert (c3.kappa, c3.eta, c3.sigma, c3.rho) == (5.0, 0.16, 0.9, 0.1)
    assert c3.reference == 0.795968
    assert c2.resolved_preconditioner() == "projected"
    assert c1.resolved_preconditioner() == "nkpa"


def test_parse_config_text_and_precedence():
    text = "# comment\nmodel = bs1d\nns = 64  # inline\nnt = 10, 20\nalpha=1e-4\npsi = mode\n"
    values = parse_config_text(text)
    assert values == {"model": "bs1d", "ns": 64, "nt": (10, 20), "alpha": 1e-4, "psi": "mode"}
    cfg = build_config(1, values, {"ns": 32, "alpha": None})
    assert cfg.ns == 32 and cfg.alpha == 1e-4 and cfg.nt == (10, 20)


@pytest.mark.parametrize("text", ["ns 5", "bogus = 1", "ns = five"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize("override", [
    {"tol1": 0.0}, {"nt": ()}, {"alpha": 1.5}, {"method": "magic"}, {"eval_s": 400.0},
    {"psi": "median"}, {"format": "xml"}, {"model": "other"}, {"sigma": -1.0},
])
def test_validation_errors(override):
    with pytest.raises(ConfigError):
        build_config(1, overrides=override)


def test_2d_needs_nv():
    with pytest.raises(ConfigError):
        build_config(2, overrides={"eval_v": 400.0})
    with pytest.raises(ConfigError):
        build_config(None, overrides={"model": "spread2d", "sigma1": 0.3, "sigma2": 0.3})
    with pytest.raises(ConfigError):
        build_config(9)


# --- reports ----------------------------------------------------------------------

def make_report(**kw):
    base = dict(model="bs1d", method="pint", n_s=40, n_t=8, alpha=1e-8, value=4.5, p_iter=3,
                reference=4.8, gmres_total=10, wall_seconds=0.25)
    base.update(kw)
    return SolveReport(**base)


def test_report_invariants():
    rep = make_report()
    assert rep.error == pytest.approx(0.3)
    assert rep.gmres_avg == pytest.approx(10 / 3)
    assert make_report(reference=None).error is None
    assert make_report(p_iter=0).gmres_avg == 0.0


def test_csv_schema_and_round_trip():
    reps = [make_report(), make_report(model="spread2d", n_v=16, reference=None)]
    text = emit_report(reps, "csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    rows = read_csv_rows(text)
    assert rows[0]["N_v"] is None and lines[1].split(",")[3] == ""
    assert rows[1]["N_v"] == 16 and rows[1]["error"] is None
    for rep, row in zip(reps, rows):
        assert row["value"] == rep.value and row["alpha"] == rep.alpha
        assert row["gmres_avg"] == rep.gmres_avg and row["p_iter"] == rep.p_iter
    assert read_csv_rows(emit_report(reps, "csv", timings=False))[0]["wall_seconds"] is None


def test_single_report_one_row():
    assert len(emit_report([make_report()], "csv").splitlines()) == 2


def test_markdown_and_json(tmp_path):
    md = emit_report([make_report()], "markdown")
    head, sep, row = md.splitlines()
    assert head.count("|") == sep.count("|") == row.count("|")
    assert "4.500000" in row
    path = tmp_path / "r.json"
    data = json.loads(emit_report([make_report(value=math.nan)], "json", path=path))
    assert data[0]["value"] is None and path.exists()
    with pytest.raises(ValueError):
        emit_report([], "csv")
    with pytest.raises(ValueError):
        emit_report([make_report()], "xml")
    with pytest.raises(OSError):
        emit_report([make_report()], "csv", path=tmp_path / "missing" / "x.csv")


# --- experiments ----------------------------------------------------------------

def test_observed_orders():
    assert observed_orders([10, 20, 40], [0.4, 0.2, 0.1]) == [1.0, 1.0]
    assert observed_orders([10, 30], [0.4, 0.2]) == [None]
    assert observed_orders([10, 20], [0.0, 0.0]) == [None]


def test_sequential_and_pint_agree():
    cfg = build_config(1, overrides={"ns": 80, "nt": (10,)})
    pint = solve(cfg, 10)
    seq = solve(dataclasses.replace(cfg, method="sequential"), 10)
    direct = solve(dataclasses.replace(cfg, method="direct"), 10)
    assert abs(pint.value - seq.value) <= 1e-5
    assert abs(direct.value - seq.value) <= 1e-8


def test_small_2d_examples_run():
    r2 = solve(build_config(2, overrides={"ns": 16, "nv": 16}), 4)
    r3 = solve(build_config(3, overrides={"ns": 16, "nv": 8}), 4)
    assert r2.converged and r3.converged
    assert 0 < r2.value < 30 and 0 < r3.value < 10


def test_run_example_override():
    reps = run_example(1, {"ns": 40, "nt": (4, 8)})
    assert [r.n_t for r in reps] == [4, 8]


def test_convergence_sweep_requirements():
    cfg = build_config(1, overrides=SMALL)
    table = convergence_sweep(cfg)
    assert len(table.reports) == 3 and len(table.orders) == 2
    with pytest.raises(ConfigError):
        convergence_sweep(dataclasses.replace(cfg, nt=(4, 8)))
    with pytest.raises(ConfigError):
        convergence_sweep(dataclasses.replace(cfg, reference=None))


def test_convergence_exact_solution_zero_error():
    # without drift or diffusion the payoff solves every step exactly
    cfg = build_config(None, overrides={"model": "bs1d", "sigma": 0.0, "r": 0.0, "ns": 20,
                                        "nt": (2, 4, 8), "eval_s": 50.0, "reference": 50.0})
    table = convergence_sweep(cfg)
    assert all(r.error <= 1e-12 for r in table.reports)


def test_iteration_matrix_layout():
    cfg = build_config(1)
    cells = iteration_matrix(cfg, [20, 40], [4, 8])
    text = iteration_matrix_csv(cells)
    lines = text.splitlines()
    assert lines[0] == "N_t\\N_s,20,40"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["4", "8"]


def test_sigma_sweep_drops_reference():
    reps = sigma_sweep(build_config(1, overrides={"ns": 40, "nt": (4,)}), [0.1, 0.3])
    assert [r.reference for r in reps] == [None, None]
    assert reps[1].value > reps[0].value


def test_determinism_identical_csv():
    cfg = build_config(1, overrides={"ns": 64, "nt": (8,)})
    a = emit_report([solve(cfg, 8)], "csv", timings=False)
    b = emit_report([solve(cfg, 8)], "csv", timings=False)
    assert a == b


# --- CLI ---------------------------------------------------------------------------

def test_cli_price_csv(tmp_path, capsys):
    out = tmp_path / "p.csv"
    code = cli.main(["price", "--ns", "40", "--nt", "4,8", "--out", str(out), "--no-timings"])
    assert code == 0
    rows = read_csv_rows(out.read_text())
    assert [r["N_t"] for r in rows] == [4, 8] and rows[0]["wall_seconds"] is None


def test_cli_config_file(tmp_path, capsys):
    conf = tmp_path / "run.cfg"
    conf.write_text("model = bs1d\nns = 30\nnt = 4\nformat = json\n")
    assert cli.main(["price", "--config", str(conf)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data[0]["n_s"] == 30


def test_cli_convergence_and_table2(capsys):
    assert cli.main(["convergence", "--ns", "40", "--nt", "4,8,16"]) == 0
    captured = capsys.readouterr()
    assert "observed temporal order" in captured.err
    assert cli.main(["table2", "--ns-list", "20", "--nt-list", "4"]) == 0
    assert capsys.readouterr().out.startswith("N_t\\N_s")


def test_cli_sweep_and_spectrum(tmp_path, capsys):
    assert cli.main(["sweep-sigma", "--ns", "30", "--nt", "4", "--sigmas", "0.1,0.2",
                     "--format", "markdown"]) == 0
    assert capsys.readouterr().out.count("\n") == 4
    stem = tmp_path / "eig"
    assert cli.main(["spectrum", "--ns", "16", "--nt", "4", "--out", str(stem)]) == 0
    assert (tmp_path / "eig_P_inv_M_k.txt").exists()


@pytest.mark.parametrize("argv", [
    ["price", "--tol1", "-1"],
    ["price", "--nt", "x"],
    ["price", "--config", "/nonexistent/file"],
    ["bogus"],
    ["convergence", "--nt", "4,8"],
])
def test_cli_config_errors(argv, capsys):
    assert cli.main(argv) == 1


def test_cli_nonconvergence(capsys):
    assert cli.main(["price", "--ns", "40", "--nt", "8", "--max-iter", "1"]) == 2
    assert "did not converge" in capsys.readouterr().err

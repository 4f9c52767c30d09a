import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pricelab import afd_fit
from pricelab.cli import main
from pricelab.config import load_config, parse_override
from pricelab.errors import ConfigurationError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def run(*argv):
    return main([str(a) for a in argv])


def small_sim(tmp_path, *extra):
    return run("simulate", "--config", CONFIGS / "default.yaml", "--horizon", 100, "--seeds", "0,1",
               "--out", tmp_path, "--quiet", *extra)


# ---------------------------------------------------------------- config


def test_defaults_reproduce_the_experiment_setup():
    cfg = load_config(CONFIGS / "default.yaml")
    ex = cfg.experiment
    assert (ex.n_products, ex.n_attributes, ex.horizon, ex.noise_variance) == (60, 6, 50_000, 0.5)
    assert ex.seeds == [0, 1, 2, 3, 4] and ex.learners == ["adept"] and ex.regimes == ["stationary"]


def test_unknown_keys_are_path_qualified(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("experiment:\n  hyper:\n    etaa0: 2\n")
    with pytest.raises(ConfigurationError, match=r"experiment\.hyper\.etaa0: unknown key"):
        load_config(p)


def test_overrides_take_precedence(tmp_path):
    cfg = load_config(CONFIGS / "default.yaml", ["experiment.horizon=123", "experiment.hyper.eta0=0.5"])
    assert cfg.experiment.horizon == 123 and cfg.experiment.hyper.eta0 == 0.5
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    with pytest.raises(ConfigurationError):
        parse_override("no-equals-sign")


def test_type_errors_are_configuration_errors():
    with pytest.raises(ConfigurationError, match="experiment.horizon"):
        load_config(None, ["experiment.horizon=lots"])


# ---------------------------------------------------------------- exit codes


def test_missing_config_exits_2(tmp_path, capsys):
    assert run("simulate", "--config", tmp_path / "nope.yaml") == 2
    assert "not found" in capsys.readouterr().err


def test_bad_key_exits_2(tmp_path):
    assert run("simulate", "--config", CONFIGS / "default.yaml", "--set", "experiment.horizn=5",
               "--out", tmp_path) == 2


def test_runtime_failure_exits_1(tmp_path):
    bad = tmp_path / "r.csv"
    bad.write_text("t,regret_cum\n1,0\n2,0\n3,0\n4,0\n")
    assert run("tailslope", bad, "--quiet") == 1


def test_console_script_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "pricelab.cli", "simulate", "--config", str(tmp_path / "x.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == 2


# ---------------------------------------------------------------- simulate


def test_simulate_writes_runs_aggregate_and_summary(tmp_path, capsys):
    assert run("simulate", "--config", CONFIGS / "default.yaml", "--horizon", 100, "--out", tmp_path) == 0
    out = tmp_path / "default"
    runs = sorted(out.glob("default_adept_stationary_[0-9].csv"))
    assert len(runs) == 5
    assert len((out / "default_adept_stationary_aggregate.csv").read_text().splitlines()) == 101
    summary = json.loads((out / "default_adept_stationary_summary.json").read_text())
    assert summary["seeds"] == [0, 1, 2, 3, 4]
    for r in runs:
        assert len(r.read_text().splitlines()) == 101
        assert r.with_suffix(".json").is_file()
    assert "regret=" in capsys.readouterr().out
    manifest = json.loads((out / "MANIFEST_simulate.json").read_text())
    assert "default_adept_stationary_0.csv" in manifest["artifacts"]


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert small_sim(a, "--set", "experiment.regimes=[shocks, drift]") == 0
    assert small_sim(b, "--set", "experiment.regimes=[shocks, drift]") == 0
    files = sorted(p.name for p in (a / "default").glob("*.csv"))
    assert files
    for name in files:
        assert (a / "default" / name).read_bytes() == (b / "default" / name).read_bytes()
    assert (a / "default" / "MANIFEST_simulate.json").read_bytes() == \
        (b / "default" / "MANIFEST_simulate.json").read_bytes()


def test_csv_format_is_plain(tmp_path):
    small_sim(tmp_path)
    raw = (tmp_path / "default" / "default_adept_stationary_0.csv").read_bytes()
    assert b"\r" not in raw
    row = raw.decode().splitlines()[1].split(",")
    assert all(len(c.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) <= 9 for c in row[1:])


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PRICELAB_OUT", str(tmp_path / "env"))
    assert run("simulate", "--config", CONFIGS / "default.yaml", "--horizon", 20, "--seeds", "0", "--quiet") == 0
    assert (tmp_path / "env" / "default" / "default_adept_stationary_0.csv").is_file()


def test_lock_blocks_a_second_writer(tmp_path):
    (tmp_path / "default").mkdir()
    (tmp_path / "default" / ".pricelab.lock").write_text("999")
    assert small_sim(tmp_path) == 1
    (tmp_path / "default" / ".pricelab.lock").unlink()
    assert small_sim(tmp_path) == 0
    assert not (tmp_path / "default" / ".pricelab.lock").exists()


# ---------------------------------------------------------------- tailslope


@pytest.mark.parametrize("power", [0.75, 1.0])
def test_tailslope_on_power_laws(tmp_path, power, capsys):
    t = np.arange(1, 2001)
    p = tmp_path / "series.csv"
    p.write_text("t,regret_cum\n" + "".join(f"{i},{float(i) ** power!r}\n" for i in t))
    assert run("tailslope", p) == 0
    rep = json.loads((tmp_path / "series_tailslope.json").read_text())
    assert rep["alpha_hat"] == pytest.approx(power, abs=1e-9)
    assert rep["t0"] == 1000
    assert "alpha_hat=" in capsys.readouterr().out


def test_tailslope_reads_aggregates(tmp_path):
    small_sim(tmp_path)
    agg = tmp_path / "default" / "default_adept_stationary_aggregate.csv"
    assert run("tailslope", agg, "--quiet", "--rho", 0.3) == 0
    assert json.loads((agg.parent / f"{agg.stem}_tailslope.json").read_text())["rho"] == 0.3


def test_tailslope_missing_file_exits_2(tmp_path):
    assert run("tailslope", tmp_path / "none.csv") == 2


# ---------------------------------------------------------------- interpret


def test_interpret_patterns(tmp_path, capsys):
    assert run("interpret", "--config", CONFIGS / "interpret.yaml", "--out", tmp_path) == 0
    lines = (tmp_path / "interpret" / "interpret.csv").read_text().splitlines()
    rows = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
    equal = np.array(rows["equal-z"][3].split(), dtype=float)
    assert equal.max() / equal.min() <= 1.01
    inc = np.array(rows["increasing-z"][3].split(), dtype=float)
    assert np.all(np.diff(inc) > 0)
    assert "theta*" in capsys.readouterr().out


def test_interpret_zero_z_clips_to_the_box(tmp_path):
    cfg = tmp_path / "i.yaml"
    cfg.write_text("interpret:\n  theta_min: 1.0\n  theta_max: 5.0\n  scenarios:\n"
                   "    - {name: zero, u: [[1,0],[0,1]], z: [0, 0]}\n")
    assert run("interpret", "--config", cfg, "--out", tmp_path, "--quiet") == 0
    line = (tmp_path / "default" / "interpret.csv").read_text().splitlines()[1].split(",")
    np.testing.assert_allclose(np.array(line[2].split(), dtype=float), [1.0, 1.0])


def test_interpret_reports_bad_scenarios_per_row(tmp_path):
    cfg = tmp_path / "i.yaml"
    cfg.write_text("interpret:\n  scenarios:\n    - {name: bad, u: [[1,0],[0,1]], z: [1, 2, 3]}\n"
                   "    - {name: good, u: [[1]], z: [10]}\n")
    assert run("interpret", "--config", cfg, "--out", tmp_path, "--quiet") == 0
    lines = (tmp_path / "default" / "interpret.csv").read_text().splitlines()
    assert "error" in lines[1] and lines[2].endswith("ok")


def test_interpret_without_section_exits_2(tmp_path):
    assert run("interpret", "--out", tmp_path) == 2


# ---------------------------------------------------------------- afdfit


def test_afdfit_on_the_bundled_fixtures(tmp_path):
    assert run("afdfit", "--config", CONFIGS / "afdfit.yaml", "--out", tmp_path, "--quiet") == 0
    out = tmp_path / "afdfit"
    assert json.loads((out / "afd_summary.json").read_text())["r_squared_test"] >= 0.99
    assert (out / "afd_coefficients.csv").read_text().startswith("attribute,level,coefficient\n")
    assert (out / "afd_decomposition.csv").is_file()
    assert run("afdfit", "--config", CONFIGS / "afdfit.yaml", "--out", tmp_path / "n", "--quiet",
               "--set", f"afdfit.path={ROOT / 'data' / 'synthetic_products_noisy.csv'}") == 0
    r2 = json.loads((tmp_path / "n" / "afdfit" / "afd_summary.json").read_text())["r_squared_test"]
    assert 0.90 <= r2 <= 0.99


def test_bundled_fixture_matches_its_generator(tmp_path):
    records, _ = afd_fit.synthetic_table(n_records=1000, seed=0)
    shipped = afd_fit.ingest_table(ROOT / "data" / "synthetic_products.csv",
                                   afd_fit.TableSchema(("a0", "a1", "a2", "a3"))).records
    assert [r.product_id for r in records] == [r.product_id for r in shipped]
    np.testing.assert_allclose([r.price for r in records], [r.price for r in shipped], rtol=1e-8)


def test_afdfit_empty_csv_exits_2(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    cfg = tmp_path / "a.yaml"
    cfg.write_text(f"afdfit:\n  path: {empty}\n  attributes: [a0]\n")
    assert run("afdfit", "--config", cfg, "--out", tmp_path) == 2


def test_afdfit_missing_column_exits_2(tmp_path):
    cfg = tmp_path / "a.yaml"
    cfg.write_text(f"afdfit:\n  path: {ROOT / 'data' / 'synthetic_products.csv'}\n  attributes: [a0, colour]\n")
    assert run("afdfit", "--config", cfg, "--out", tmp_path, "--quiet") == 2


# ---------------------------------------------------------------- bench


def test_bench_single_cell(tmp_path, capsys):
    cfg = tmp_path / "b.yaml"
    cfg.write_text("experiment:\n  name: b\nbench:\n  settings: [[20, 4]]\n  learners: [gdg]\n  horizon: 50\n")
    assert run("bench", "--config", cfg, "--out", tmp_path) == 0
    lines = (tmp_path / "b" / "bench.csv").read_text().splitlines()
    assert len(lines) == 2
    secs = float(lines[1].split(",")[-1])
    assert np.isfinite(secs) and secs > 0
    assert "N=20, d=4" in capsys.readouterr().out


def test_bench_grid_shape(tmp_path):
    cfg = tmp_path / "b.yaml"
    cfg.write_text("experiment:\n  name: b\n  hyper: {n_phases: 2}\nbench:\n  settings: [[20, 4], [30, 6]]\n"
                   "  learners: [adept, gdg, ee, opok]\n  horizon: 40\n")
    assert run("bench", "--config", cfg, "--out", tmp_path, "--quiet") == 0
    assert len((tmp_path / "b" / "bench.csv").read_text().splitlines()) == 1 + 2 * 4

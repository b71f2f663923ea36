import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from heraldgate.cli import main
from heraldgate.config import (
    ConfigError,
    bundled_config,
    config_to_dict,
    dumps,
    load,
    loads,
    parse_config,
    resolve_parameter,
    with_overrides,
    with_parameter,
)
from heraldgate.harness import run, run_config, substream_seed, sweep
from heraldgate.imperfections import CAUSE_KEYS, ImperfectionParams
from heraldgate.protocol import ProtocolConfig

NOMINAL = load(bundled_config("paper-nominal"))
IDEAL = load(bundled_config("ideal"))


def _files(root):
    return sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file())


def test_bundled_configs_match_constructors():
    assert NOMINAL.protocol == ProtocolConfig.nominal()
    assert NOMINAL.imperfections == ImperfectionParams.nominal()
    assert IDEAL.imperfections.enabled == frozenset()
    assert IDEAL.protocol.source == "single-photon"


@pytest.mark.parametrize("rc", [NOMINAL, IDEAL], ids=["nominal", "ideal"])
def test_config_roundtrip(rc):
    again = loads(dumps(rc))
    assert again == rc
    assert dumps(again) == dumps(rc)
    assert again.hash() == rc.hash()


def test_hash_ignores_output_but_not_physics():
    assert with_overrides(NOMINAL, out_dir="elsewhere").hash() == NOMINAL.hash()
    assert with_overrides(NOMINAL, seed=1).hash() != NOMINAL.hash()
    assert with_parameter(NOMINAL, "mean_n", 0.08).hash() != NOMINAL.hash()


@pytest.mark.parametrize("path, key", [
    (("protocol", "colour"), "protocol.colour"),
    (("imperfections", "spam"), "imperfections.spam"),
    (("protocol", "module_a", "g"), "protocol.module_a.g"),
    (("extra",), "extra"),
])
def test_unknown_key_named(path, key):
    d = config_to_dict(NOMINAL)
    node = d
    for k in path[:-1]:
        node = node[k]
    node[path[-1]] = 1
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(d)


@pytest.mark.parametrize("path, value, key", [
    (("protocol", "mean_n"), -1, "mean_n"),
    (("protocol", "eta_det"), "high", "eta_det"),
    (("imperfections", "spam_error"), 2, "spam_error"),
    (("imperfections", "enabled"), ["gremlins"], "enabled"),
    (("experiment",), "dance", "experiment"),
    (("schema_version",), 99, "schema_version"),
])
def test_bad_values_named(path, value, key):
    d = config_to_dict(NOMINAL)
    node = d
    for k in path[:-1]:
        node = node[k]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match=key):
        parse_config(d)


def test_resolve_parameter():
    assert resolve_parameter("mean_n") == "protocol.mean_n"
    assert resolve_parameter("t2_a_us") == "imperfections.t2_a_us"
    with pytest.raises(ConfigError, match="ambiguous"):
        resolve_parameter("g_mhz")
    with pytest.raises(ConfigError, match="unknown"):
        resolve_parameter("warp_factor")


def test_substream_seed():
    a = substream_seed(5, "bell", 0)
    assert a == substream_seed(5, "bell", 0)
    assert 0 <= a < 2 ** 64
    others = {substream_seed(5, "bell", 1), substream_seed(5, "budget", 0),
              substream_seed(6, "bell", 0), substream_seed(2 ** 63 + 5, "bell", 0)}
    assert a not in others and len(others) == 4


def test_ideal_truth_table_run(tmp_path):
    rc = with_overrides(IDEAL, out_dir=str(tmp_path / "o"))
    b = run_config(rc)
    assert b.results["fidelity"] == pytest.approx(1, abs=1e-12)
    assert b.results["fidelity_err"] == 0
    b.write(rc.out_dir, rc.fmt)
    assert _files(tmp_path) == ["o/plot_fig2_truth_table.csv", "o/provenance.json",
                                "o/results.json"]
    prov = json.loads((tmp_path / "o" / "provenance.json").read_text())
    assert prov["config_hash"] == rc.hash()


def test_budget_csv_row_order(tmp_path):
    cfg = tmp_path / "n.cfg"
    rc = with_overrides(NOMINAL, out_dir=str(tmp_path / "out"))
    cfg.write_text(dumps(rc))
    run(cfg)
    rows = (tmp_path / "out" / "budget.csv").read_text().splitlines()
    assert rows[0] == "cause,dF_truth,dF_truth_err,dF_bell,dF_bell_err"
    assert [r.split(",")[0] for r in rows[1:]] == [*CAUSE_KEYS, "total"]


def test_budget_infinite_t2_has_zero_decoherence_row():
    rc = with_parameter(with_parameter(NOMINAL, "t2_a_us", math.inf), "t2_b_us", math.inf)
    rows = {r["cause"]: r for r in run_config(rc).results["rows"]}
    assert abs(rows["decoherence"]["delta_f_truth"]) < 1e-12
    assert abs(rows["decoherence"]["delta_f_bell"]) < 1e-12


def test_rerun_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        rc = with_overrides(NOMINAL, experiment="bell", out_dir=str(tmp_path / name),
                            heralds=600, draws=50, bootstrap=20)
        run_config(rc).write(rc.out_dir, rc.fmt)
        outs.append({f: (tmp_path / name / f).read_bytes() for f in _files(tmp_path / name)})
    assert outs[0] == outs[1]
    assert "plot_fig3_real_uxux.csv" in outs[0] and "plot_figS1_imag_dxdx.csv" in outs[0]


def _no_dark(rc):
    causes = [c for c in CAUSE_KEYS if c != "dark_counts"]
    return with_overrides(rc, imperfections=rc.imperfections.only(*causes), draws=50)


def test_sweep_mean_n_decreasing():
    pts = sweep(_no_dark(NOMINAL), "mean_n", [0.2, 0.0, 0.07, 1e-6]).results["points"]
    assert [p["value"] for p in pts] == [0.0, 1e-6, 0.07, 0.2]
    # mean_n = 0 heralds nothing; its n -> 0+ limit is the best point
    assert pts[0]["success_probability"] == 0 and math.isnan(pts[0]["bell_fidelity"])
    f = [p["bell_fidelity"] for p in pts[1:]]
    assert f[0] > f[1] > f[2]


def test_sweep_mean_n_zero_with_dark_counts_is_noise():
    rc = with_overrides(NOMINAL, draws=50)
    pts = sweep(rc, "mean_n", [0.0, 0.07]).results["points"]
    assert pts[0]["bell_fidelity"] == pytest.approx(0.25, abs=0.01)
    assert pts[1]["bell_fidelity"] > 0.7


def test_sweep_eta_det_linear():
    rc = with_overrides(NOMINAL, draws=50)
    pts = sweep(rc, "eta_det", [0.25, 0.5, 1.0]).results["points"]
    p = np.array([q["success_probability"] for q in pts])
    ratio = p / np.array([0.25, 0.5, 1.0])
    assert np.all(np.abs(ratio / ratio[1] - 1) < 0.02)


def test_sweep_errors():
    with pytest.raises(ConfigError):
        sweep(NOMINAL, "warp_factor", [1])
    with pytest.raises(ValueError):
        sweep(NOMINAL, "mean_n", [])


def test_cli_ok_and_outputs_stay_in_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "run"
    code = main(["truth-table", "--config", "ideal", "--out", str(out), "--format", "csv"])
    assert code == 0
    assert _files(tmp_path) == ["run/plot_fig2_truth_table.csv", "run/provenance.json",
                                "run/truth_table.csv"]
    line = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert line["fidelity"] == pytest.approx(1)


def test_cli_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("experiment: bell\nprotocol:\n  colour: blue\n")
    assert main(["bell", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "protocol.colour" in capsys.readouterr().err
    assert main(["sweep", "--config", "ideal", "--parameter", "warp", "--grid", "1"]) == 2
    assert main(["bell", "--config", "no-such-config"]) == 2
    assert not (tmp_path / "o").exists()


def test_cli_herald_starvation(tmp_path):
    cfg = tmp_path / "dark.cfg"
    rc = with_parameter(NOMINAL, "mean_n", 0.0)
    rc = with_overrides(rc, imperfections=ImperfectionParams.nominal().only("weak_coherent"))
    cfg.write_text(dumps(rc))
    out = tmp_path / "o"
    assert main(["bell", "--config", str(cfg), "--out", str(out)]) == 3
    res = json.loads((out / "results.json").read_text())
    assert res["status"] == "herald-starvation"
    assert res["provenance"]["config_hash"] == with_overrides(rc, experiment="bell").hash()


def test_env_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HERALDGATE_SEED", "41")
    monkeypatch.setenv("HERALDGATE_ANALYTIC", "1")
    out = tmp_path / "o"
    assert main(["truth-table", "--config", "paper-nominal", "--out", str(out)]) == 0
    prov = json.loads((out / "provenance.json").read_text())
    assert prov["seed"] == 41 and prov["analytic"] is True
    assert main(["truth-table", "--config", "paper-nominal", "--out", str(out),
                 "--seed", "3"]) == 0
    assert json.loads((out / "provenance.json").read_text())["seed"] == 3
    monkeypatch.setenv("HERALDGATE_SEED", "many")
    assert main(["truth-table", "--config", "ideal", "--out", str(out)]) == 2


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "heraldgate.cli", "phase-audit", "--config",
                        "paper-nominal", "--out", str(tmp_path)], capture_output=True, text=True,
                       env={**os.environ, "HERALDGATE_SEED": "1"})
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["experiment"] == "phase-audit"

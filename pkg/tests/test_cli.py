import csv
import json
import os
import subprocess
import sys

import pytest

from ssmc.cli import EXIT_ERROR, EXIT_OK, EXIT_STAT, main

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _bessel(**exp):
    e = {"starts": [30], "stop_bound": 1, "replicas": 200, "t_list": [0.0, 0.05]}
    e.update(exp)
    return {
        "schema_version": 1,
        "kernel": {"family": "bessel", "d": 3},
        "scaling": {"gamma": 2},
        "levy": {"estimate_from_kernel": True},
        "experiment": e,
        "seed": 4,
    }


def test_check_bessel_passes(tmp_path):
    out = tmp_path / "o"
    code = main(["check", "--config", os.path.join(CONFIGS, "bessel_d3.json"), "--out", str(out)])
    assert code == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    assert rep["regime"] == "positive_recurrent" and all(rep["flags"].values())
    assert (out / "plan.json").exists()


def test_check_regime_mismatch_exits_2(tmp_path):
    cfg = json.loads(open(os.path.join(CONFIGS, "bessel_d_minus3.json")).read())
    cfg["check"] = {"require": ["A3"], "expect_regime": "positive_recurrent"}
    assert main(["check", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_STAT


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c.pop("schema_version"),
        lambda c: c.update(schema_version=99),
        lambda c: c["kernel"].update(family="nope"),
        lambda c: c.update(levy={"triplet": {"b": -1.0}, "estimate_from_kernel": True}),
        lambda c: c.pop("scaling"),
        lambda c: c["experiment"].update(replicas=0),
    ],
)
def test_malformed_config_exits_1(tmp_path, mutate, capsys):
    cfg = _bessel()
    mutate(cfg)
    assert main(["absorption", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err


def test_unparsable_json_exits_1(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["check", "--config", str(p), "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["check", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_absorption_down_walk(tmp_path):
    out = tmp_path / "o"
    code = main(["absorption", "--config", os.path.join(CONFIGS, "downwalk.json"), "--out", str(out), "--replicas", "20"])
    assert code == EXIT_OK
    rows = list(csv.DictReader((out / "samples.csv").open()))
    assert len(rows) == 20 and {r["value"] for r in rows} == {"99"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["target_mean"] == pytest.approx(1.0)
    assert summary["starts"]["100"]["mean_ratio"] == pytest.approx(0.99)


def test_absorption_all_censored_exits_2(tmp_path):
    cfg = _bessel(cap_multiple=1e-4, starts=[100])
    assert main(["absorption", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_STAT


def test_overrides_land_in_plan(tmp_path):
    out = tmp_path / "o"
    main(["absorption", "--config", _write(tmp_path, _bessel()), "--out", str(out), "--seed", "77", "--replicas", "10"])
    plan = json.loads((out / "plan.json").read_text())
    assert plan["seed"] == 77 and plan["experiment"]["replicas"] == 10


def test_round_trip_reproduces_csv(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["marginals", "--config", _write(tmp_path, _bessel()), "--out", str(a), "--replicas", "100"]) in (0, 2)
    main(["marginals", "--config", str(a / "plan.json"), "--out", str(b)])
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()


def test_marginals_t0_rows_are_one(tmp_path):
    out = tmp_path / "o"
    main(["marginals", "--config", _write(tmp_path, _bessel()), "--out", str(out)])
    rows = [r for r in csv.DictReader((out / "samples.csv").open()) if float(r["t"]) == 0.0]
    assert rows and all(float(r["chain"]) == 1.0 and float(r["limit"]) == 1.0 for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    assert [r["t"] for r in summary["ks"]] == [0.0, 0.05]


def test_coupling_and_limit(tmp_path):
    cfg = _bessel(t_list=[0.0, 0.1], replicas=300)
    out = tmp_path / "c"
    assert main(["coupling", "--config", _write(tmp_path, cfg), "--out", str(out)]) in (EXIT_OK, EXIT_STAT)
    assert (out / "samples.csv").read_text().startswith("replica,t,poisson_clock,time_changed")
    out2 = tmp_path / "l"
    cfg = json.loads(open(os.path.join(CONFIGS, "dufresne_limit.json")).read())
    cfg["experiment"]["replicas"] = 50
    assert main(["limit", "--config", _write(tmp_path, cfg), "--out", str(out2)]) == EXIT_OK
    summary = json.loads((out2 / "summary.json").read_text())
    assert summary["psi_gamma"] == pytest.approx(-2.0)


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "ssmc.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for name in ("check", "absorption", "marginals", "coupling", "limit"):
        assert name in res.stdout

import numpy as np
import pytest

from holdersel.cli import main
from holdersel.config import (
    apply_override,
    config_hash,
    dump_config,
    load_config,
    model_from_dict,
    model_to_dict,
    parse_config,
)
from holdersel.csvio import format_value, read_summary, summary_body, write_summary
from holdersel.errors import ConfigError

SELECTION = """
[model]
d = 1
gamma = 0.5
rate = {plus = 4.0, minus = 1.0}
drift = 0.0
fast_noise = 1.0

[experiment]
harness = "selection"
seed0 = 0
n_paths = 200
eps = 0.05
delta = 0.1

[output]
summary_csv = "sel.csv"
"""

BUDGET = """
[model]
kind = "two-scale"
d = 1
k = 1
slow_drift = 0.0
slow_diffusion = 0.0
fast_drift = {family = "affine", const = 0.0, y_coef = -1.0}
fast_diffusion = 1.0
fast_jump = 1.0
fast_measure = {atoms = [1.0], weights = [1e6]}
cutoff = 0.5

[experiment]
harness = "residual"
seed0 = 0
n_paths = 10
eps = [1e-4]
T = 1.0
"""


@pytest.fixture
def cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _write(dir_, name, text):
    p = dir_ / name
    p.write_text(text)
    return p


def test_run_writes_summary_and_is_byte_identical(cwd, capsys):
    cfg = _write(cwd, "sel.toml", SELECTION)
    assert main(["run", str(cfg)]) == 0
    first = summary_body(cwd / "sel.csv")
    (cwd / "sel.csv").unlink()
    assert main(["run", str(cfg), "--workers", "2"]) == 0
    assert summary_body(cwd / "sel.csv") == first
    meta, rows = read_summary(cwd / "sel.csv")
    assert meta["seed0"] == "0" and rows[0]["status"] == "ok"
    assert rows[0]["config_hash"] == load_config(cfg).hash
    assert "wrote 1 row(s)" in capsys.readouterr().out


def test_run_appends_rows(cwd):
    cfg = _write(cwd, "sel.toml", SELECTION)
    assert main(["run", str(cfg)]) == 0
    assert main(["run", str(cfg), "--set", "experiment.seed0=5"]) == 0
    _, rows = read_summary(cwd / "sel.csv")
    assert [r["seed0"] for r in rows] == ["0", "5"]
    assert rows[0]["config_hash"] != rows[1]["config_hash"]


def test_exponent_out_of_range_exits_2(cwd, capsys):
    cfg = _write(cwd, "bad.toml", SELECTION.replace("gamma = 0.5", "gamma = 1.5"))
    assert main(["run", str(cfg)]) == 2
    assert "0 < gamma < 1" in capsys.readouterr().err
    assert not (cwd / "sel.csv").exists()


def test_missing_seed_exits_2(cwd, capsys):
    cfg = _write(cwd, "noseed.toml", SELECTION.replace("seed0 = 0\n", ""))
    assert main(["run", str(cfg)]) == 2
    assert "seed0 is required" in capsys.readouterr().err


def test_failed_validation_exits_2(cwd, capsys):
    cfg = _write(cwd, "att.toml", SELECTION.replace("plus = 4.0", "plus = -4.0"))
    assert main(["validate", str(cfg)]) == 2
    assert "FAIL sign-regime" in capsys.readouterr().out
    assert main(["run", str(cfg)]) == 2


def test_numeric_failure_exits_3(cwd, capsys):
    cfg = _write(cwd, "budget.toml", BUDGET)
    assert main(["run", str(cfg)]) == 3
    assert "budget" in capsys.readouterr().err


def test_missing_file_and_unknown_keys_exit_2(cwd):
    assert main(["run", str(cwd / "nope.toml")]) == 2
    cfg = _write(cwd, "typo.toml", SELECTION.replace("n_paths", "n_path"))
    assert main(["run", str(cfg)]) == 2
    cfg = _write(cwd, "typo2.toml", SELECTION.replace("fast_noise", "fast_nose"))
    assert main(["validate", str(cfg)]) == 2


def test_validate_passes(cwd, capsys):
    cfg = _write(cwd, "sel.toml", SELECTION)
    assert main(["validate", str(cfg)]) == 0
    out = capsys.readouterr().out
    for name in ("exponent-range", "sign-regime", "fast-noise-nondegenerate"):
        assert f"PASS {name}" in out


def _analyze(capsys, *args):
    assert main(["analyze", *args]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    return {k.strip(): float(v) for k, v in (ln.split("=") for ln in lines)}


def test_analyze_outputs(capsys):
    p = _analyze(capsys, "p-select", "--gamma", "0.5", "--phi+", "4", "--phi-", "1")
    assert p["p_plus"] == pytest.approx(4 ** (2 / 3) / (1 + 4 ** (2 / 3)), rel=1e-14)
    assert p["p_plus"] + p["p_minus"] == pytest.approx(1.0, abs=1e-15)
    assert _analyze(capsys, "pi-mass", "--phi+", "-2", "--phi-", "-2")["mass_plus"] == 0.5
    m = _analyze(capsys, "pi-mass", "--phi+", "-8", "--phi-", "-1")
    assert m["mass_plus"] == pytest.approx(0.2)
    v = _analyze(capsys, "psi-bar", "--phi+", "-8", "--phi-", "-1", "--psi+", "1", "--psi-", "0")
    assert v["psi_bar"] == pytest.approx(0.2)
    s = _analyze(capsys, "scale", "--phi+", "4", "--phi-", "1", "--y", "0", "--eps", "0.1")
    assert s["scale"] == 0.0
    g = _analyze(capsys, "gamma-asym", "--A", "1", "--eps", "1e-3", "--delta", "0.1")
    # (1/(1+g)) (eps^2/A)^(1/(1+g)) Gamma(1/(1+g)) at g = 1/2
    assert g["asymptotic"] == pytest.approx((1e-6) ** (2 / 3) * 1.3541179394264 / 1.5,
                                            rel=1e-12)
    assert g["rel_error"] < 0.01


def test_analyze_errors(capsys):
    assert main(["analyze", "p-select", "--gamma", "1.5", "--phi+", "4", "--phi-", "1"]) == 2
    assert main(["analyze", "p-select", "--phi+", "4"]) == 2
    assert main(["analyze", "bogus"]) == 2


def test_analyze_csv_long_format(cwd, capsys):
    out = cwd / "a.csv"
    main(["analyze", "p-select", "--phi+", "4", "--phi-", "1", "--csv", str(out)])
    main(["analyze", "pi-mass", "--phi+", "-8", "--phi-", "-1", "--csv", str(out)])
    _, rows = read_summary(out)
    got = {(r["analysis"], r["quantity"]): float(r["value"]) for r in rows}
    assert got[("p-select", "p_plus")] == pytest.approx(0.7158963465833499, rel=1e-14)
    assert got[("pi-mass", "mass_plus")] == pytest.approx(0.2)


def test_demo(capsys):
    assert main(["demo", "--n-paths", "400", "--eps", "1e-3"]) == 0
    out = capsys.readouterr().out
    assert "p_plus_hat" in out
    assert "0.25" in out and "-1.0" in out


# configuration and csv helpers


def test_config_hash_is_canonical():
    a = {"model": {"gamma": 0.5, "d": 1}, "experiment": {"seed0": 1}}
    b = {"experiment": {"seed0": 1}, "model": {"d": 1, "gamma": 0.5}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "experiment": {"seed0": 2}})
    assert len(config_hash(a)) == 64


def test_config_round_trip(cwd):
    cfg = load_config(_write(cwd, "sel.toml", SELECTION))
    path = cwd / "copy.toml"
    dump_config(cfg.document, path)
    again = load_config(path)
    assert again.hash == cfg.hash and again.model == cfg.model
    assert model_from_dict(model_to_dict(cfg.model)) == cfg.model


def test_overrides():
    doc = {"experiment": {"seed0": 0, "eps": 0.1}}
    apply_override(doc, "experiment.eps=[0.1, 0.05]")
    apply_override(doc, "output.summary_csv='x.csv'")
    assert doc["experiment"]["eps"] == [0.1, 0.05]
    assert doc["output"]["summary_csv"] == "x.csv"
    with pytest.raises(ConfigError):
        apply_override(doc, "no-equals-sign")


def test_parse_config_errors():
    base = {"model": {"d": 1, "gamma": 0.5, "rate": 1.0, "drift": 0.0, "fast_noise": 1.0},
            "experiment": {"harness": "selection", "seed0": 0}}
    assert parse_config(base).seed0 == 0
    for bad in ({**base, "extra": {}},
                {**base, "experiment": {"harness": "nope", "seed0": 0}},
                {**base, "experiment": {"harness": "selection", "seed0": -1}},
                {**base, "model": {**base["model"], "kind": "three-scale"}}):
        with pytest.raises(ConfigError):
            parse_config(bad)


def test_csv_formatting_and_header_guard(tmp_path):
    assert format_value(0.1) == "0.1" and format_value(float("nan")) == "nan"
    assert format_value(True) == "true" and format_value(None) == ""
    p = tmp_path / "s.csv"
    write_summary(p, [{"a": 1.5, "b": "x"}], config_hash="h", seed0=0, version="v")
    write_summary(p, [{"a": np.float64(2.5), "b": "y"}], config_hash="h", seed0=1, version="v")
    assert summary_body(p).splitlines() == ["config_hash,seed0,version,a,b",
                                            "h,0,v,1.5,x", "h,1,v,2.5,y"]
    with pytest.raises(ConfigError):
        write_summary(p, [{"c": 1}], config_hash="h", seed0=0, version="v")

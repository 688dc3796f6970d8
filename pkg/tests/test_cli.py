import csv
import json
import subprocess
import sys

import pytest

from cylinder_asymptotics.cli_io import RunConfig, clean, load_config, run
from cylinder_asymptotics.errors import ConfigError


def read_report(out):
    return json.loads((out / "report.json").read_text())


def read_table(out):
    with open(out / "table.csv", newline="") as fh:
        return list(csv.reader(fh))


def test_radial_command(tmp_path):
    assert run(["radial", "--n", "3", "--k", "2", "--out", str(tmp_path)]) == 0
    rep = read_report(tmp_path)
    assert rep["command"] == "radial"
    assert rep["config"]["n"] == 3
    assert rep["results"]["profile"]["h"] == pytest.approx(2.668494760, abs=1e-9)
    assert rep["results"]["closed_form"]["a1"] == pytest.approx(3.84332878, rel=1e-8)
    assert (tmp_path / "table.csv").read_bytes().count(b"\r\n") >= 2


def test_indexset_command(tmp_path):
    assert run(["indexset", "--n", "3", "--k", "2", "--cutoff", "3", "--out", str(tmp_path)]) == 0
    rows = read_table(tmp_path)
    assert rows[0] == ["value", "origin", "kernel_rates", "witness", "extra_multiple", "resonant"]
    assert [float(r[0]) for r in rows[1:]] == [1.0, 1.5, 2.0, 2.5, 3.0]
    assert read_report(tmp_path)["results"]["oracle"]["passed"]


def test_expand_synthetic(tmp_path):
    assert run(["expand", "--n", "3", "--k", "1", "--out", str(tmp_path)]) == 0
    assert read_report(tmp_path)["results"]


def test_config_file_and_rejection(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 4, "k": 2, "cutoff": 2.0, "h": 0.5}))
    assert run(["indexset", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert read_report(tmp_path / "a")["results"]["values"] == pytest.approx([1.0, (8 / 3) ** 0.5, 2.0])
    cfg.write_text(json.dumps({"n": 4, "bogus": 1}))
    out = tmp_path / "b"
    assert run(["indexset", "--config", str(cfg), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["exit_code"] == 2 and "bogus" in json.dumps(err)


def test_load_config_checks():
    with pytest.raises(ConfigError):
        load_config("radial", overrides={"T": -1.0})
    with pytest.raises(ConfigError):
        load_config("radial", overrides={"n": 3.5})
    with pytest.raises(ConfigError):
        load_config("radial", overrides={"window": [4.0, 2.0]})
    with pytest.raises(ConfigError):
        load_config("expand", overrides={"source": "disk"})
    cfg = load_config("radial", overrides={"n": 5, "k": 2})
    assert isinstance(cfg, RunConfig) and cfg.echo()["n"] == 5


def test_clean_pins_digits():
    out = clean({"a": 1.0 / 3.0, "b": [float("inf"), float("nan")]})
    assert out["a"] == 0.333333333333
    assert out["b"] == ["inf", "nan"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cylinder_asymptotics", "radial", "--n", "3", "--k", "4",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["exit_code"] == 2

import json
import subprocess
import sys

import pytest

from satom import cli
from satom.config import load_scenario

SMALL = {
    "reliability": ("fig6.scenario", []),
    "mttf": ("fig6.scenario", ["--trials", "2000"]),
    "mtd-trace": ("example1.scenario", []),
    "dos-sim": ("dos.scenario", []),
    "tpt-sim": ("tpt.scenario", ["--trials", "50"]),
    "ta-sim": ("ta.scenario", ["--trials", "2"]),
    "fallback": ("fallback.scenario", ["--trials", "100"]),
}


def _header_config(text):
    line = next(l for l in text.splitlines() if l.startswith("# scenario="))
    return json.loads(line[len("# scenario="):])


@pytest.mark.parametrize("sub", sorted(SMALL))
def test_every_subcommand_runs(sub, tmp_path, capsys):
    scenario, extra = SMALL[sub]
    assert cli.main([sub, scenario, "--out", str(tmp_path)] + extra) == 0
    assert capsys.readouterr().out.strip()
    csvs = sorted(tmp_path.glob("*.csv"))
    assert "metrics.csv" in {p.name for p in csvs} and len(csvs) >= 2
    assert (tmp_path / "summary.txt").read_text(encoding="utf-8").strip()
    for p in csvs:
        raw = p.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
        text = raw.decode("utf-8")
        conf = _header_config(text)
        assert conf["engine"]["master_seed"] == 1
        body = [l for l in text.splitlines() if not l.startswith("#")]
        assert len(body) >= 2 and all(l.count(",") == body[0].count(",") for l in body if '"' not in l)


def test_overrides_are_embedded(tmp_path):
    assert cli.main(["fallback", "fallback.scenario", "--out", str(tmp_path), "--trials", "20", "--seed", "9"]) == 0
    conf = _header_config((tmp_path / "fallback.csv").read_text(encoding="utf-8"))
    assert conf["engine"]["trials"] == 20 and conf["engine"]["master_seed"] == 9


def test_sweep_adds_rows(tmp_path):
    args = ["fallback", "fallback.scenario", "--out", str(tmp_path), "--trials", "50", "--sweep", "M=0:20:10"]
    assert cli.main(args) == 0
    text = (tmp_path / "fallback.csv").read_text(encoding="utf-8")
    assert "# sweep=fallback.M=0:20:10" in text
    rows = [l for l in text.splitlines() if not l.startswith("#")][1:]
    assert [r.split(",")[0] for r in rows] == ["0", "10", "20"]


def test_seed_changes_monte_carlo_output(tmp_path):
    for seed in ("1", "2"):
        cli.main(["mttf", "fig6.scenario", "--out", str(tmp_path / seed), "--trials", "500", "--seed", seed])
    a = (tmp_path / "1" / "mttf.csv").read_text(encoding="utf-8").splitlines()[3:]
    b = (tmp_path / "2" / "mttf.csv").read_text(encoding="utf-8").splitlines()[3:]
    assert a != b


@pytest.mark.parametrize("args", [
    ["reliability", "missing.scenario"],
    ["fallback", "fallback.scenario", "--sweep", "warp=0:1:1"],
    ["fallback", "fallback.scenario", "--sweep", "M=5:0:1"],
    ["fallback", "fallback.scenario", "--trials", "0"],
])
def test_errors_exit_nonzero(args, tmp_path, capsys):
    assert cli.main(args + ["--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_invalid_scenario_file(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text('{"engine": {"master_seed": 1}, "fallback": {"uplink_block_prob": 1.3}}', encoding="utf-8")
    assert cli.main(["fallback", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "fallback.uplink_block_prob" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "satom", "mtd-trace", "example1.scenario", "--out", str(tmp_path)],
                         capture_output=True, text=True, check=True)
    assert "router events" in out.stdout
    assert load_scenario("example1.scenario").dumps() in (tmp_path / "trace.csv").read_text(encoding="utf-8")

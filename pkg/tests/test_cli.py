import csv
import re
import xml.etree.ElementTree as ET
from dataclasses import fields

import numpy as np
import pytest

from uavrelay import cli
from uavrelay.model import Scenario

SMALL = """\
num_slots: 12
horizon_s: 4
ue_pos_m: [[5, 5], [-5, 5]]
task_mbits: [40, 20]
output_ratio: [0.8, 0.5]
"""
RUN_FILES = {"summary.csv", "schedule.csv", "bandwidth.csv", "trajectory.csv", "convergence.csv",
             "trajectory.svg"}


def _same(a: Scenario, b: Scenario) -> bool:
    return all(np.array_equal(getattr(a, f.name), getattr(b, f.name)) for f in fields(Scenario))


@pytest.fixture
def small_file(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def _read(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema: ")
    return list(csv.DictReader(lines[1:]))


def test_empty_file_is_default():
    assert _same(cli.parse_scenario("").scenario, Scenario())
    assert cli.parse_scenario("").sweep is None


def test_units_are_converted():
    scn = cli.parse_scenario("noise_dbm: -60\nref_gain_db: -30\nbandwidth_mhz: 20\ntask_mbits: 100\n").scenario
    assert scn.noise_power == pytest.approx(1e-9)
    assert scn.ref_gain == pytest.approx(1e-3)
    assert scn.bandwidth_total == 20e6
    assert np.all(scn.task_bits == 100e6)


def test_ue_count_follows_positions():
    assert cli.parse_scenario(SMALL).scenario.num_ues == 2


def test_unknown_key_reports_line():
    with pytest.raises(cli.ScenarioError, match=r"'bandwith_mhz' \(line 2\)"):
        cli.parse_scenario("num_slots: 10\nbandwith_mhz: 30\n")


@pytest.mark.parametrize("text", ["v_max_mps: -1\n", "num_slots: 2\n", "task_mbits: [1, 2]\n",
                                  "horizon_s: ten\n", "[1, 2]\n", "a: [\n"])
def test_invalid_files(text):
    with pytest.raises(cli.ScenarioError):
        cli.parse_scenario(text)


def test_sweep_block():
    sf = cli.parse_scenario("sweep:\n  parameter: I\n  grid: 400..500:50\n")
    assert sf.sweep == cli.SweepSpec("I", (400.0, 450.0, 500.0))
    sf = cli.parse_scenario("sweep: {parameter: T, grid: [8, 10]}\n")
    assert sf.sweep.grid == (8.0, 10.0)
    with pytest.raises(cli.ScenarioError, match="line 1"):
        cli.parse_scenario("sweep: {parameter: N, grid: [8]}\n")


def test_parse_range():
    assert cli.parse_range("8..12:2") == (8.0, 10.0, 12.0)
    assert cli.parse_range("0.2..1") == (0.2, 0.4, 0.6, 0.8, 1.0)
    assert cli.parse_range("0.1..0.3:0.1") == (0.1, 0.2, 0.3)
    assert cli.parse_range("5..5") == (5.0,)
    for bad in ["1-5", "5..1", "1..5:0", "a..b"]:
        with pytest.raises(ValueError):
            cli.parse_range(bad)


def test_run_writes_tables_and_plot(tmp_path, small_file):
    out = tmp_path / "run"
    assert cli.run(["--scenario", str(small_file), "--out", str(out), "--quiet"]) == 0
    assert {p.name for p in out.iterdir()} == RUN_FILES
    summary = _read(out / "summary.csv")
    assert len(summary) == 1 and summary[0]["scheme"] == "proposed"
    assert len(_read(out / "schedule.csv")) == 2 * 12
    assert len(_read(out / "bandwidth.csv")) == 2 * 12
    traj = _read(out / "trajectory.csv")
    assert len(traj) == 13 and traj[0]["speed_mps"] == ""
    conv = _read(out / "convergence.csv")
    assert conv[0]["iteration"] == "2"
    assert float(conv[-1]["wsec_j"]) == float(summary[0]["wsec_j"])


def test_rerun_is_byte_identical(tmp_path, small_file):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.run(["--scenario", str(small_file), "--out", str(out), "--quiet",
                        "--max-outer", "3"]) == 0
    for name in RUN_FILES:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def _svg_polyline(path):
    root = ET.parse(path).getroot()
    ns = {"svg": "http://www.w3.org/2000/svg"}
    group = root.find(".//svg:g[@id='trajectory']", ns)
    d = group.find(".//svg:path", ns).get("d")
    nums = [float(v) for v in re.findall(r"-?\d+(?:\.\d+)?(?:e-?\d+)?", d)]
    return np.array(nums).reshape(-1, 2)


def test_svg_path_matches_waypoints(tmp_path, small_file):
    out = tmp_path / "run"
    cli.run(["--scenario", str(small_file), "--out", str(out), "--quiet", "--max-outer", "3"])
    pts = _svg_polyline(out / "trajectory.svg")
    wp = np.array([[float(r["x_m"]), float(r["y_m"])] for r in _read(out / "trajectory.csv")])
    assert pts.shape == wp.shape
    # the plot is an axis-aligned scaling plus shift of the data
    design = np.column_stack([wp, np.ones(len(wp))])
    coef, *_ = np.linalg.lstsq(design, pts, rcond=None)
    assert np.abs(design @ coef - pts).max() < 0.01
    assert max(abs(coef[1, 0]), abs(coef[0, 1])) < 1e-6 * abs(coef[0, 0])
    assert coef[0, 0] > 0 and coef[1, 1] < 0  # SVG y points down


def test_all_schemes(tmp_path, small_file):
    out = tmp_path / "all"
    assert cli.run(["--scenario", str(small_file), "--out", str(out), "--quiet", "--scheme", "all",
                    "--max-outer", "3"]) == 0
    summary = _read(out / "summary.csv")
    assert [r["scheme"] for r in summary] == list(cli.SCHEMES)
    for scheme in cli.SCHEMES:
        assert {p.name for p in (out / scheme).iterdir()} == RUN_FILES


def test_sweep_run(tmp_path, small_file, monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "2")
    out = tmp_path / "sweep"
    assert cli.run(["--scenario", str(small_file), "--out", str(out), "--quiet", "--scheme", "local",
                    "--sweep", "T=4..6:2"]) == 0
    rows = _read(out / "sweep.csv")
    assert [(r["value"], r["scheme"]) for r in rows] == [("4.0", "local_computing"), ("6.0", "local_computing")]
    assert float(rows[1]["wsec_j"]) < float(rows[0]["wsec_j"])
    assert (out / "sweep.svg").exists()
    assert {p.name for p in (out / "runs" / "T=6" / "local_computing").iterdir()} == RUN_FILES


def test_config_errors_exit_2(tmp_path, monkeypatch, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("altitude: 10\n")
    assert cli.run(["--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert cli.run(["--scenario", str(tmp_path / "missing.yaml")]) == 2
    assert cli.run(["--sweep", "N=1..2", "--out", str(tmp_path / "o")]) == 2
    assert cli.run(["--tol", "0", "--out", str(tmp_path / "o")]) == 2
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    assert cli.run(["--out", str(tmp_path / "o")]) == 2


def test_infeasible_result_exits_1(tmp_path, small_file, monkeypatch):
    real = cli.solve

    def broken(scn, cfg):
        res = real(scn, cfg)
        res.flags.append("infeasible:1")
        return res

    monkeypatch.setattr(cli, "solve", broken)
    assert cli.run(["--scenario", str(small_file), "--out", str(tmp_path / "o"), "--quiet",
                    "--scheme", "local"]) == 1

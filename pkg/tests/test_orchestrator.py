import numpy as np
import pytest

from uavrelay.model import check_feasibility, straight_trajectory
from uavrelay.orchestrator import (
    SCHEMES,
    SolveConfig,
    baseline_direct_trajectory,
    baseline_local_computing,
    baseline_offloading_only,
    solve,
    sweep,
)


def test_local_baseline_table1(table1):
    res = baseline_local_computing(table1)
    # 4 UEs x 1e-28 (4e11 cycles)^3 / 10 s**2, plus a 1 m/s flight along the chord
    assert res.report.totals()["ue_local"] == pytest.approx(4 * 6.4e4)
    assert res.wsec == pytest.approx(2.56e5, rel=1e-3)
    assert res.converged and res.flags == []


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(scheme="greedy")
    with pytest.raises(ValueError):
        SolveConfig(outer_tol=0)
    with pytest.raises(ValueError):
        SolveConfig(max_outer=1)


@pytest.fixture(scope="module")
def small_results():
    from uavrelay.model import Scenario

    scn = Scenario(num_slots=12, num_ues=2, horizon=4.0, ue_pos=[(5, 5), (-5, 5)],
                   task_bits=[40e6, 20e6], output_ratio=[0.8, 0.5])
    return scn, {s: solve(scn, SolveConfig(scheme=s)) for s in SCHEMES}


def test_every_scheme_is_feasible(small_results):
    scn, results = small_results
    for name, res in results.items():
        assert res.scheme == name
        assert check_feasibility(scn, res.schedule, res.bandwidth, res.trajectory) == [], name
        assert not any(f.startswith("infeasible") for f in res.flags)


def test_proposed_is_best(small_results):
    _, results = small_results
    best = results["proposed"].wsec
    for name, res in results.items():
        assert best <= res.wsec * (1 + 1e-9), name


def test_trace_non_increasing(small_results):
    _, results = small_results
    for res in results.values():
        t = np.array(res.trace)
        assert np.all(np.diff(t) <= 1e-9), res.scheme
        assert res.trace[-1] == pytest.approx(res.wsec)


def test_records(small_results):
    _, results = small_results
    rec = results["proposed"].records
    assert [r.index for r in rec] == list(range(2, 2 + len(rec)))
    w = small_results[0].weight_uav
    assert all(r.wsec == pytest.approx(r.ue_energy + w * r.uav_energy) for r in rec)
    assert all(r.dual_evaluations >= 1 for r in rec)


def test_baseline_structure(small_results):
    scn, results = small_results
    direct = results["direct_trajectory"].trajectory
    assert np.allclose(direct.waypoints, straight_trajectory(scn).waypoints)
    assert np.all(results["offloading_only"].schedule.f_ue == 0)
    assert results["offloading_only"].report.totals()["ue_local"] == 0


def test_wrappers_match_solve(small):
    cfg = SolveConfig(max_outer=3)
    assert baseline_direct_trajectory(small, cfg).wsec == solve(
        small, SolveConfig(max_outer=3, scheme="direct_trajectory")).wsec
    assert baseline_offloading_only(small, cfg).scheme == "offloading_only"


def test_huge_tolerance_stops_after_two_passes(small):
    res = solve(small, SolveConfig(outer_tol=1e9))
    assert res.converged and len(res.trace) == 2


def test_deterministic(small):
    cfg = SolveConfig(max_outer=4)
    a, b = solve(small, cfg), solve(small, cfg)
    assert a.trace == b.trace
    assert np.array_equal(a.trajectory.waypoints, b.trajectory.waypoints)


def test_max_outer_flag(small):
    res = solve(small, SolveConfig(max_outer=3, outer_tol=1e-12))
    assert len(res.trace) == 2
    assert "max-outer" in res.flags and not res.converged


def test_sweep_rows(small):
    cfg = SolveConfig(max_outer=3)
    rows = sweep(small, "T", [4.0, 6.0], ["direct_trajectory", "local_computing"], cfg)
    assert [(r.value, r.scheme) for r in rows] == [
        (4.0, "direct_trajectory"), (4.0, "local_computing"),
        (6.0, "direct_trajectory"), (6.0, "local_computing")]
    # local cost falls with more time; the 10 m chord flown slower costs more
    assert rows[3].wsec < rows[1].wsec
    assert rows[2].wsec > rows[0].wsec
    assert all(r.wsec == pytest.approx(r.ue_energy + small.weight_uav * r.uav_energy) for r in rows)
    threaded = sweep(small, "T", [4.0, 6.0], ["direct_trajectory", "local_computing"], cfg, workers=2)
    assert [r.wsec for r in threaded] == [r.wsec for r in rows]


def test_sweep_rejects_unknown(small):
    with pytest.raises(ValueError):
        sweep(small, "N", [1])
    with pytest.raises(ValueError):
        sweep(small, "I", [1], ["greedy"])

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uavrelay.model import (
    BandwidthPlan,
    InfeasibleRate,
    Scenario,
    Schedule,
    Trajectory,
    channel_gain_ap,
    channel_gain_ue,
    check_feasibility,
    db_to_linear,
    dbm_to_watt,
    energy_report,
    fly_energy,
    local_bits,
    local_energy,
    local_only_schedule,
    min_energy_speed,
    straight_trajectory,
    tx_energy,
    uav_compute_bits,
    uav_compute_energy,
    uav_download_energy,
    uav_offload_energy,
    ue_offload_energy,
    wsec,
)


# --- scenario -------------------------------------------------------------

def test_table1_timing(table1):
    assert table1.slot_len * table1.num_slots == pytest.approx(table1.horizon, rel=1e-12)
    assert table1.subslot_len * table1.num_slots * table1.num_ues == pytest.approx(table1.horizon, rel=1e-12)
    assert table1.subslot_len == pytest.approx(0.05)


def test_unit_conversions():
    assert db_to_linear(-30) == pytest.approx(1e-3)
    assert dbm_to_watt(-60) == pytest.approx(1e-9)


def test_scenario_rejects_slow_uav():
    with pytest.raises(ValueError, match="v_max"):
        Scenario(v_max=0.5)  # chord is 10 m in 10 s


@pytest.mark.parametrize("kw", [dict(bandwidth_total=0), dict(output_ratio=1.5), dict(task_bits=-1),
                                dict(num_slots=3), dict(ue_pos=[(0, 0)])])
def test_scenario_rejects_bad_fields(kw):
    with pytest.raises(ValueError):
        Scenario(**kw)


def test_with_changes_keeps_latency_tied_to_horizon(table1):
    shorter = table1.with_changes(horizon=8.0)
    assert np.all(shorter.latency == 8.0)


# --- channel --------------------------------------------------------------

def test_gain_above_ap(table1):
    assert channel_gain_ap(table1, (0, 0)) == pytest.approx(1e-5)
    assert channel_gain_ap(table1, (5, 5)) == pytest.approx(1e-3 / 150)


def test_gain_above_ue(table1):
    assert channel_gain_ue(table1, (5, 5), 0) == pytest.approx(1e-5)
    at_origin = [channel_gain_ue(table1, (0, 0), k) for k in range(4)]
    assert np.allclose(at_origin, at_origin[0])
    with pytest.raises(IndexError):
        channel_gain_ue(table1, (0, 0), 4)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-20, 20), st.floats(-20, 20))
def test_gain_identity_and_translation(x, y, dx, dy):
    scn = Scenario()
    g = channel_gain_ue(scn, (x, y), 1)
    d2 = (x - scn.ue_pos[1, 0]) ** 2 + (y - scn.ue_pos[1, 1]) ** 2
    assert g * (d2 + scn.altitude ** 2) / scn.ref_gain == pytest.approx(1.0)
    moved = Scenario(ue_pos=scn.ue_pos + [dx, dy])
    assert channel_gain_ue(moved, (x + dx, y + dy), 1) == pytest.approx(g, rel=1e-9)


# --- energies -------------------------------------------------------------

def test_local_energy_examples(table1):
    assert local_energy(table1, 0, 0.0) == 0.0 and local_bits(table1, 0, 0.0) == 0.0
    assert local_energy(table1, 0, 1e9) == pytest.approx(0.02)
    f = np.full(50, 4e10)
    assert local_bits(table1, 0, f).sum() == pytest.approx(4e8)
    assert local_energy(table1, 0, f).sum() == pytest.approx(6.4e4)
    with pytest.raises(ValueError):
        local_energy(table1, 0, -1.0)


def test_uav_compute_examples(table1):
    assert uav_compute_energy(table1, 0, 0.0) == 0.0
    assert uav_compute_energy(table1, 0, 1e9) == pytest.approx(5e-3)
    assert uav_compute_bits(table1, 0, 1e9) * 1000 == pytest.approx(0.05 * 1e9)


def test_transmission_examples(table1):
    assert ue_offload_energy(table1, 0.0, 0.0, 1e-5) == 0.0
    assert ue_offload_energy(table1, 1e6, 3e7, 1e-5) == pytest.approx(0.05 * 1e-4 * (2 ** (2 / 3) - 1))
    assert ue_offload_energy(table1, 1e6, 3e7, 1e-5) == pytest.approx(2.937e-6, rel=1e-3)
    assert uav_offload_energy(table1, 5e5, 1.5e7, 6.667e-6) == pytest.approx(4.405e-6, rel=1e-3)
    args = (3e5, 1e7, 2e-6)
    assert uav_offload_energy(table1, *args) == ue_offload_energy(table1, *args) == uav_download_energy(table1, *args)
    with pytest.raises(InfeasibleRate):
        ue_offload_energy(table1, 1.0, 0.0, 1e-5)


@given(st.floats(1e3, 5e6), st.floats(1e5, 3e7))
def test_transmission_convexity(bits, band):
    e = lambda l, b: tx_energy(l, b, 1e-5, 0.05, 1e-9)  # noqa: E731
    assert e(2 * bits, band) > 2 * e(bits, band)
    # convex and decreasing in bandwidth
    lo, mid, hi = e(bits, band), e(bits, 1.5 * band), e(bits, 2 * band)
    assert lo > mid > hi
    assert mid < 0.5 * (lo + hi)


def test_fly_energy_examples(table1):
    assert fly_energy(table1, 10.0) == pytest.approx(1.54752)
    v_star = min_energy_speed(table1)
    assert v_star == pytest.approx((15.976 / (3 * 0.00614)) ** 0.25)
    assert v_star == pytest.approx(5.429, abs=5e-3)  # 5.4268 to four places
    grid = np.linspace(0.5, 10, 400)
    assert np.all(fly_energy(table1, grid) >= fly_energy(table1, v_star) - 1e-15)


def test_fly_energy_floor(table1):
    assert fly_energy(table1, 0.0) == fly_energy(table1, 0.1)
    with pytest.raises(ValueError):
        fly_energy(table1, 0.0, strict=True)


# --- report ---------------------------------------------------------------

def test_zero_plan_costs_only_flight(table1):
    traj = straight_trajectory(table1)
    rep = wsec(table1, Schedule.zeros(table1), BandwidthPlan.zeros(table1), traj)
    assert rep.wsec == pytest.approx(table1.weight_uav * fly_energy(table1, traj.speeds).sum())


def test_local_plan_reproduces_reference_total(table1):
    rep = wsec(table1, local_only_schedule(table1), BandwidthPlan.zeros(table1), straight_trajectory(table1))
    assert rep.ue_weighted == pytest.approx(2.56e5, rel=1e-9)


def test_report_recombination(small):
    rng = np.random.default_rng(3)
    k, n = small.num_ues, small.num_slots
    z = Schedule(*(rng.uniform(0, 1e6, (k, n)) for _ in range(5)))
    z.f_ue *= 1e3
    z.f_uav *= 1e3
    bw = BandwidthPlan(*(rng.uniform(1e6, 1e7, (k, n)) for _ in range(3)))
    wp = straight_trajectory(small).waypoints + np.vstack([[0, 0], rng.normal(0, 1, (n - 1, 2)), [0, 0]])
    rep = energy_report(small, z, bw, Trajectory(wp, small.slot_len))
    manual = (small.weight_uav * (rep.uav_compute + rep.uav_offload + rep.uav_download).sum()
              + small.weight_uav * rep.uav_fly.sum()
              + (small.weight_ue[:, None] * (rep.ue_local + rep.ue_offload)).sum())
    assert rep.wsec == pytest.approx(manual, rel=1e-9)
    assert rep.wsec_per_slot.sum() == pytest.approx(rep.wsec, rel=1e-9)
    assert all(v >= 0 for v in rep.totals().values())


# --- feasibility ----------------------------------------------------------

def test_local_plan_is_feasible(table1):
    z = local_only_schedule(table1)
    assert check_feasibility(table1, z, BandwidthPlan.zeros(table1), straight_trajectory(table1)) == []


def _names(violations):
    return {v.constraint for v in violations}


def test_single_perturbations_are_named(table1):
    traj = straight_trajectory(table1)
    bw = BandwidthPlan.zeros(table1)

    z = local_only_schedule(table1)
    z.f_ue[0, 3] *= 1.01
    assert "balance:task" in _names(check_feasibility(table1, z, bw, traj))

    z = local_only_schedule(table1)
    z.l_off_ue[1, -1] = 1e3
    got = _names(check_feasibility(table1, z, bw, traj))
    assert "boundary:l_off_ue" in got and "rate:l_off_ue" in got

    z = local_only_schedule(table1)
    z.f_ue[2, 0] = -1.0
    assert "nonnegative:f_ue" in _names(check_feasibility(table1, z, bw, traj))

    fast = Trajectory(traj.waypoints.copy(), traj.slot_len)
    fast.waypoints[1] = [20.0, 20.0]
    assert "speed" in _names(check_feasibility(table1, local_only_schedule(table1), bw, fast))

    moved = Trajectory(traj.waypoints.copy(), traj.slot_len)
    moved.waypoints[-1] = [0.0, 0.0]
    assert "endpoint:end" in _names(check_feasibility(table1, local_only_schedule(table1), bw, moved))


def test_offload_scaling_breaks_completion(small):
    from uavrelay.orchestrator import SolveConfig, solve

    res = solve(small, SolveConfig(max_outer=3))
    assert check_feasibility(small, res.schedule, res.bandwidth, res.trajectory) == []
    z = res.schedule.copy()
    z.l_off_ue *= 1.01
    assert "balance:task" in _names(check_feasibility(small, z, res.bandwidth, res.trajectory))


def test_causality_violation_detected(small):
    z = local_only_schedule(small)
    bw = BandwidthPlan.zeros(small)
    bw.b_off_uav[0, 1] = small.bandwidth_total
    z.l_off_uav[0, 1] = 1e6  # forwarded before anything was received
    assert "causality:processing" in _names(check_feasibility(small, z, bw, straight_trajectory(small)))


def test_dimension_mismatch(table1, small):
    with pytest.raises(ValueError, match="shape"):
        wsec(table1, Schedule.zeros(small), BandwidthPlan.zeros(table1), straight_trajectory(table1))


def test_straight_trajectory(table1):
    traj = straight_trajectory(table1)
    assert np.allclose(traj.speeds, 1.0)
    assert np.array_equal(traj.waypoints[0], table1.uav_start)
    assert np.array_equal(traj.waypoints[-1], table1.uav_end)
    assert math.isclose(np.linalg.norm(traj.positions[0] - traj.waypoints[1]), 0.0)

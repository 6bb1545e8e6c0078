import numpy as np
import pytest

from uavrelay.model import BandwidthPlan, Scenario, Trajectory, table1_scenario


def random_tiny(seed: int, n: int = 6):
    """Single-UE instance with a wiggly path and a random admissible band split."""
    rng = np.random.default_rng(seed)
    scn = Scenario(num_slots=n, num_ues=1, ue_pos=[rng.uniform(-10, 10, 2)],
                   ap_pos=rng.uniform(-10, 10, 2), task_bits=rng.uniform(20e6, 200e6),
                   output_ratio=rng.uniform(0.2, 1.0), horizon=rng.uniform(2, 10),
                   uav_start=rng.uniform(-10, 10, 2), uav_end=rng.uniform(-10, 10, 2), v_max=50)
    wp = np.linspace(scn.uav_start, scn.uav_end, n + 1)
    wp[1:-1] += rng.uniform(-5, 5, (n - 1, 2))
    traj = Trajectory(wp, scn.slot_len)
    idx = np.arange(n)
    allowed = np.stack([idx <= n - 3, (idx >= 1) & (idx <= n - 2), idx >= 2])
    shares = rng.dirichlet([1.0, 1.0, 1.0], size=n).T * allowed
    shares /= shares.sum(axis=0)
    parts = shares * scn.bandwidth_total
    bw = BandwidthPlan(parts[0][None].copy(), parts[1][None].copy(), parts[2][None].copy())
    return scn, traj, bw


@pytest.fixture
def table1():
    return table1_scenario()


@pytest.fixture
def small():
    """Two UEs, twelve slots: big enough to exercise every slot role, quick to solve."""
    return Scenario(num_slots=12, num_ues=2, horizon=4.0, ue_pos=[(5, 5), (-5, 5)],
                    task_bits=[40e6, 20e6], output_ratio=[0.8, 0.5])


# acceptance criteria report: criterion number -> (passed, detail)
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")

"""Problem data, energy formulas, feasibility checks and the WSEC evaluator.

Slot indexing
-------------
Slots are numbered ``1..N`` in the physical description of the system and
``0..N-1`` in every array of this package: slot ``n`` lives at index
``n - 1``.  Waypoints are the exception, ``waypoints[n]`` is the UAV position
during slot ``n`` and ``waypoints[0]`` is the take-off point, so that array has
``N + 1`` rows.  With that mapping the boundary-zero rules read

* UE offload ``l_off_ue``       : zero at indices ``N-2, N-1``
* UAV compute / forward         : zero at indices ``0, N-1``
* UAV download ``l_down_uav``   : zero at indices ``0, 1``

All quantities are SI: bits, Hz, W, J, s, m.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

V_FLOOR = 0.1
"""Speed floor (m/s) used inside the fixed-wing propulsion model."""

BIT_TOL = 1e-3
REL_TOL = 1e-6
HZ_TOL = 1e-3


class InfeasibleRate(ValueError):
    """Positive bit count scheduled on a zero-bandwidth link."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _as_points(a, shape_name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError(f"{shape_name} must hold 2-D points, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_vector(a, k: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = np.full(k, float(arr))
    if arr.shape != (k,):
        raise ValueError(f"{name} must have length {k}, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable problem instance.

    Per-UE quantities are length-``K`` arrays; scalars passed for them are
    broadcast.  ``latency`` is carried for completeness but every solver
    assumes ``latency == horizon``.
    """

    num_slots: int = 50
    num_ues: int = 4
    horizon: float = 10.0
    bandwidth_total: float = 30e6
    ref_gain: float = 1e-3
    noise_power: float = 1e-9
    altitude: float = 10.0
    v_max: float = 10.0
    fly_coeff_1: float = 0.00614
    fly_coeff_2: float = 15.976
    uav_start: Sequence[float] = (-5.0, -5.0)
    uav_end: Sequence[float] = (5.0, -5.0)
    ap_pos: Sequence[float] = (0.0, 0.0)
    ue_pos: Sequence[Sequence[float]] = ((5.0, 5.0), (-5.0, 5.0), (-5.0, -5.0), (5.0, -5.0))
    weight_uav: float = 0.2
    weight_ue: Sequence[float] = 1.0
    cap_uav: float = 1e-28
    cap_ue: Sequence[float] = 1e-28
    task_bits: Sequence[float] = 400e6
    cycles_per_bit: Sequence[float] = 1000.0
    output_ratio: Sequence[float] = 0.8
    latency: Optional[Sequence[float]] = None

    def __post_init__(self):
        k = int(self.num_ues)
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("num_slots", int(self.num_slots))
        set_("num_ues", k)
        set_("uav_start", _as_points(self.uav_start, "uav_start"))
        set_("uav_end", _as_points(self.uav_end, "uav_end"))
        set_("ap_pos", _as_points(self.ap_pos, "ap_pos"))
        ue = _as_points(self.ue_pos, "ue_pos")
        if ue.shape != (k, 2):
            raise ValueError(f"ue_pos must have shape ({k}, 2), got {ue.shape}")
        set_("ue_pos", ue)
        for name in ("weight_ue", "cap_ue", "task_bits", "cycles_per_bit", "output_ratio"):
            set_(name, _as_vector(getattr(self, name), k, name))
        lat = self.horizon if self.latency is None else self.latency
        set_("latency", _as_vector(lat, k, "latency"))
        problems = self.validate()
        if problems:
            raise ValueError("invalid scenario: " + "; ".join(problems))

    def validate(self) -> list[str]:
        out = []
        if self.num_slots < 4:
            out.append("num_slots must be >= 4 (offload, relay and download need distinct slots)")
        if self.num_ues < 1:
            out.append("num_ues must be >= 1")
        for name in ("horizon", "bandwidth_total", "ref_gain", "noise_power", "altitude",
                     "v_max", "fly_coeff_1", "fly_coeff_2", "weight_uav", "cap_uav"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        for name in ("weight_ue", "cap_ue", "task_bits", "cycles_per_bit", "latency"):
            if not np.all(getattr(self, name) > 0):
                out.append(f"{name} must be > 0")
        if not np.all((self.output_ratio > 0) & (self.output_ratio <= 1)):
            out.append("output_ratio must lie in (0, 1]")
        if np.any(self.latency > self.horizon * (1 + 1e-12)):
            out.append("latency must not exceed the horizon")
        chord = float(np.linalg.norm(self.uav_end - self.uav_start))
        if self.horizon > 0 and self.v_max < chord / self.horizon:
            out.append(
                f"v_max={self.v_max} m/s is below ||u_F - u_I||/T = {chord / self.horizon:.6g} m/s;"
                " no trajectory can reach the final position in time"
            )
        return out

    @property
    def slot_len(self) -> float:
        return self.horizon / self.num_slots

    @property
    def subslot_len(self) -> float:
        return self.horizon / (self.num_slots * self.num_ues)

    def with_changes(self, **kw) -> "Scenario":
        # a latency that simply tracked the horizon keeps tracking it
        if "horizon" in kw and "latency" not in kw and np.all(self.latency == self.horizon):
            kw["latency"] = None
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def table1_scenario(**overrides) -> Scenario:
    """The default simulation setting (30 MHz, 10 s, 50 slots, 4 UEs, ...)."""
    return Scenario(**overrides)


def _zeros(scn: Scenario) -> np.ndarray:
    return np.zeros((scn.num_ues, scn.num_slots))


@dataclass
class Schedule:
    """CPU frequencies and bit counts, each of shape ``(K, N)``."""

    f_ue: np.ndarray
    l_off_ue: np.ndarray
    f_uav: np.ndarray
    l_off_uav: np.ndarray
    l_down_uav: np.ndarray

    @classmethod
    def zeros(cls, scn: Scenario) -> "Schedule":
        return cls(*(_zeros(scn) for _ in range(5)))

    def copy(self) -> "Schedule":
        return Schedule(*(a.copy() for a in self.arrays()))

    def arrays(self) -> tuple:
        return (self.f_ue, self.l_off_ue, self.f_uav, self.l_off_uav, self.l_down_uav)


@dataclass
class BandwidthPlan:
    """Per-UE, per-slot three-way split of the band, each ``(K, N)`` in Hz."""

    b_off_ue: np.ndarray
    b_off_uav: np.ndarray
    b_down_uav: np.ndarray

    @classmethod
    def zeros(cls, scn: Scenario) -> "BandwidthPlan":
        return cls(_zeros(scn), _zeros(scn), _zeros(scn))

    def copy(self) -> "BandwidthPlan":
        return BandwidthPlan(self.b_off_ue.copy(), self.b_off_uav.copy(), self.b_down_uav.copy())

    def total(self) -> np.ndarray:
        return self.b_off_ue + self.b_off_uav + self.b_down_uav


@dataclass
class Trajectory:
    """Horizontal waypoints ``u[0..N]``; row ``n`` is the position in slot ``n``."""

    waypoints: np.ndarray
    slot_len: float

    @property
    def speeds(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1) / self.slot_len

    @property
    def positions(self) -> np.ndarray:
        """Positions used for the channel of slots ``1..N`` (shape ``(N, 2)``)."""
        return self.waypoints[1:]

    def copy(self) -> "Trajectory":
        return Trajectory(self.waypoints.copy(), self.slot_len)


def straight_trajectory(scn: Scenario) -> Trajectory:
    """Constant-speed chord from ``uav_start`` to ``uav_end``."""
    s = np.linspace(0.0, 1.0, scn.num_slots + 1)[:, None]
    wp = (1 - s) * scn.uav_start + s * scn.uav_end
    wp[0], wp[-1] = scn.uav_start, scn.uav_end
    return Trajectory(wp, scn.slot_len)


# ---------------------------------------------------------------------------
# physical formulas
# ---------------------------------------------------------------------------

def channel_gain_ap(scn: Scenario, u) -> np.ndarray:
    """LoS gain between UAV position(s) ``u`` and the AP."""
    d2 = np.sum((np.asarray(u, dtype=float) - scn.ap_pos) ** 2, axis=-1)
    return scn.ref_gain / (d2 + scn.altitude ** 2)


def channel_gain_ue(scn: Scenario, u, k: int) -> np.ndarray:
    if not 0 <= k < scn.num_ues:
        raise IndexError(f"UE index {k} out of range for K={scn.num_ues}")
    d2 = np.sum((np.asarray(u, dtype=float) - scn.ue_pos[k]) ** 2, axis=-1)
    return scn.ref_gain / (d2 + scn.altitude ** 2)


def trajectory_gains(scn: Scenario, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(h_ap, h_ue)`` with shapes ``(N,)`` and ``(K, N)``."""
    pos = traj.positions
    h_ap = channel_gain_ap(scn, pos)
    d2 = np.sum((pos[None, :, :] - scn.ue_pos[:, None, :]) ** 2, axis=-1)
    h_ue = scn.ref_gain / (d2 + scn.altitude ** 2)
    return h_ap, h_ue


def _check_nonneg(x, name):
    if np.any(np.asarray(x) < 0):
        raise ValueError(f"{name} must be non-negative")


def local_energy(scn: Scenario, k: int, f):
    _check_nonneg(f, "CPU frequency")
    return scn.slot_len * scn.cap_ue[k] * np.asarray(f, dtype=float) ** 3


def local_bits(scn: Scenario, k: int, f):
    _check_nonneg(f, "CPU frequency")
    return scn.slot_len * np.asarray(f, dtype=float) / scn.cycles_per_bit[k]


def uav_compute_energy(scn: Scenario, k: int, f):
    _check_nonneg(f, "CPU frequency")
    return scn.subslot_len * scn.cap_uav * np.asarray(f, dtype=float) ** 3


def uav_compute_bits(scn: Scenario, k: int, f):
    _check_nonneg(f, "CPU frequency")
    return scn.subslot_len * np.asarray(f, dtype=float) / scn.cycles_per_bit[k]


def tx_energy(bits, bandwidth, gain, duration: float, noise_power: float):
    """Energy to push ``bits`` through a ``bandwidth`` Hz link within ``duration``.

    ``bits == 0`` costs nothing whatever the bandwidth; positive bits on a
    zero-width link raise :class:`InfeasibleRate`.
    """
    bits = np.asarray(bits, dtype=float)
    bandwidth = np.asarray(bandwidth, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if np.any(bits < 0):
        raise ValueError("bit counts must be non-negative")
    active = bits > 0
    if np.any(active & ~(bandwidth > 0)):
        raise InfeasibleRate("positive bits scheduled on a zero-bandwidth link")
    bw = np.where(active, bandwidth, 1.0)
    with np.errstate(over="ignore"):
        spent = duration * noise_power / gain * np.expm1(np.log(2.0) * bits / (duration * bw))
    out = np.where(active, spent, 0.0)
    return out if out.ndim else float(out)


def ue_offload_energy(scn: Scenario, l, b, h):
    return tx_energy(l, b, h, scn.subslot_len, scn.noise_power)


def uav_offload_energy(scn: Scenario, l, b, h_ap):
    return tx_energy(l, b, h_ap, scn.subslot_len, scn.noise_power)


def uav_download_energy(scn: Scenario, l, b, h_k):
    return tx_energy(l, b, h_k, scn.subslot_len, scn.noise_power)


def fly_energy(scn: Scenario, v, strict: bool = False):
    """Fixed-wing propulsion energy for one slot flown at speed ``v``.

    Speeds below :data:`V_FLOOR` are evaluated at the floor; with
    ``strict=True`` they raise instead.
    """
    v = np.asarray(v, dtype=float)
    slow = v < V_FLOOR
    if np.any(slow):
        if strict:
            raise ValueError(f"speed below the {V_FLOOR} m/s floor of the propulsion model")
        log.debug("clamping %d slot speed(s) to %.3g m/s", int(np.sum(slow)), V_FLOOR)
    vv = np.maximum(v, V_FLOOR)
    out = scn.slot_len * (scn.fly_coeff_1 * vv ** 3 + scn.fly_coeff_2 / vv)
    return out if out.ndim else float(out)


def min_energy_speed(scn: Scenario) -> float:
    return (scn.fly_coeff_2 / (3.0 * scn.fly_coeff_1)) ** 0.25


# ---------------------------------------------------------------------------
# energy accounting
# ---------------------------------------------------------------------------

@dataclass
class EnergyReport:
    """Per-slot energy components in joules.

    UE and UAV per-link components have shape ``(K, N)``, ``uav_fly`` has
    shape ``(N,)``.
    """

    ue_local: np.ndarray
    ue_offload: np.ndarray
    uav_compute: np.ndarray
    uav_offload: np.ndarray
    uav_download: np.ndarray
    uav_fly: np.ndarray
    weight_ue: np.ndarray = field(repr=False)
    weight_uav: float = field(repr=False)

    @property
    def ue_per_slot(self) -> np.ndarray:
        return self.ue_local + self.ue_offload

    @property
    def uav_per_slot(self) -> np.ndarray:
        return (self.uav_compute + self.uav_offload + self.uav_download).sum(axis=0) + self.uav_fly

    @property
    def ue_total(self) -> float:
        return float(self.ue_per_slot.sum())

    @property
    def ue_weighted(self) -> float:
        return float(np.sum(self.weight_ue[:, None] * self.ue_per_slot))

    @property
    def uav_total(self) -> float:
        return float(self.uav_per_slot.sum())

    @property
    def wsec_per_slot(self) -> np.ndarray:
        return self.weight_uav * self.uav_per_slot + (self.weight_ue[:, None] * self.ue_per_slot).sum(axis=0)

    @property
    def wsec(self) -> float:
        return float(self.weight_uav * self.uav_total + self.ue_weighted)

    def totals(self) -> dict:
        return {
            "ue_local": float(self.ue_local.sum()),
            "ue_offload": float(self.ue_offload.sum()),
            "uav_compute": float(self.uav_compute.sum()),
            "uav_offload": float(self.uav_offload.sum()),
            "uav_download": float(self.uav_download.sum()),
            "uav_fly": float(self.uav_fly.sum()),
            "ue_total": self.ue_total,
            "uav_total": self.uav_total,
            "wsec": self.wsec,
        }


def _check_dims(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory):
    shape = (scn.num_ues, scn.num_slots)
    for a in z.arrays() + (bw.b_off_ue, bw.b_off_uav, bw.b_down_uav):
        if np.shape(a) != shape:
            raise ValueError(f"expected array of shape {shape}, got {np.shape(a)}")
    if np.shape(traj.waypoints) != (scn.num_slots + 1, 2):
        raise ValueError(f"expected {scn.num_slots + 1} waypoints, got shape {np.shape(traj.waypoints)}")


def energy_report(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory) -> EnergyReport:
    _check_dims(scn, z, bw, traj)
    h_ap, h_ue = trajectory_gains(scn, traj)
    d, n0 = scn.subslot_len, scn.noise_power
    tau = scn.slot_len
    return EnergyReport(
        ue_local=tau * scn.cap_ue[:, None] * z.f_ue ** 3,
        ue_offload=tx_energy(z.l_off_ue, bw.b_off_ue, h_ue, d, n0),
        uav_compute=d * scn.cap_uav * z.f_uav ** 3,
        uav_offload=tx_energy(z.l_off_uav, bw.b_off_uav, h_ap[None, :], d, n0),
        uav_download=tx_energy(z.l_down_uav, bw.b_down_uav, h_ue, d, n0),
        uav_fly=fly_energy(scn, traj.speeds),
        weight_ue=scn.weight_ue,
        weight_uav=scn.weight_uav,
    )


def wsec(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory) -> EnergyReport:
    """Weighted sum energy of a complete plan (returns the full report)."""
    return energy_report(scn, z, bw, traj)


def scheduling_objective(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory) -> float:
    """Objective of the scheduling subproblem: WSEC without propulsion."""
    r = energy_report(scn, z, bw, traj)
    return r.wsec - scn.weight_uav * float(r.uav_fly.sum())


def bandwidth_objective(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory) -> float:
    """Objective of the bandwidth subproblem: weighted transmission energy."""
    r = energy_report(scn, z, bw, traj)
    return float(np.sum(scn.weight_ue[:, None] * r.ue_offload)
                 + scn.weight_uav * (r.uav_offload.sum() + r.uav_download.sum()))


def processed_bits(scn: Scenario, z: Schedule) -> np.ndarray:
    """Bits the UAV disposes of per slot (computed on board plus forwarded)."""
    return scn.subslot_len * z.f_uav / scn.cycles_per_bit[:, None] + z.l_off_uav


# ---------------------------------------------------------------------------
# feasibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    constraint: str
    ue: Optional[int]
    slot: Optional[int]  # 1-based slot number, None for aggregate constraints
    amount: float
    detail: str = ""

    def __str__(self):
        where = []
        if self.ue is not None:
            where.append(f"ue={self.ue}")
        if self.slot is not None:
            where.append(f"slot={self.slot}")
        loc = ("[" + ", ".join(where) + "]") if where else ""
        return f"{self.constraint}{loc}: {self.amount:.6g} {self.detail}".rstrip()


BOUNDARY_ZEROS = {
    "l_off_ue": lambda n: (n - 2, n - 1),
    "f_uav": lambda n: (0, n - 1),
    "l_off_uav": lambda n: (0, n - 1),
    "l_down_uav": lambda n: (0, 1),
}
BW_BOUNDARY_ZEROS = {
    "b_off_ue": BOUNDARY_ZEROS["l_off_ue"],
    "b_off_uav": BOUNDARY_ZEROS["l_off_uav"],
    "b_down_uav": BOUNDARY_ZEROS["l_down_uav"],
}


def check_feasibility(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory,
                      bit_tol: float = BIT_TOL, rel_tol: float = REL_TOL,
                      hz_tol: float = HZ_TOL) -> list[Violation]:
    """List every violated constraint of the joint problem (empty when feasible)."""
    _check_dims(scn, z, bw, traj)
    out: list[Violation] = []
    n_slots = scn.num_slots
    for name in ("f_ue", "l_off_ue", "f_uav", "l_off_uav", "l_down_uav"):
        arr = getattr(z, name)
        for k, n in zip(*np.nonzero(arr < 0)):
            out.append(Violation(f"nonnegative:{name}", int(k), int(n) + 1, float(arr[k, n])))
    for name, where in BOUNDARY_ZEROS.items():
        arr = getattr(z, name)
        for idx in where(n_slots):
            for k in np.nonzero(arr[:, idx] != 0)[0]:
                out.append(Violation(f"boundary:{name}", int(k), idx + 1, float(arr[k, idx]),
                                     "must be zero in this slot"))
    for name, where in BW_BOUNDARY_ZEROS.items():
        arr = getattr(bw, name)
        for k, n in zip(*np.nonzero(arr < 0)):
            out.append(Violation(f"nonnegative:{name}", int(k), int(n) + 1, float(arr[k, n])))
        for idx in where(n_slots):
            for k in np.nonzero(arr[:, idx] != 0)[0]:
                out.append(Violation(f"boundary:{name}", int(k), idx + 1, float(arr[k, idx]),
                                     "must be zero in this slot"))

    # links carrying bits need bandwidth
    for lname, bname in (("l_off_ue", "b_off_ue"), ("l_off_uav", "b_off_uav"),
                         ("l_down_uav", "b_down_uav")):
        l, b = getattr(z, lname), getattr(bw, bname)
        for k, n in zip(*np.nonzero((l > 0) & ~(b > 0))):
            out.append(Violation(f"rate:{lname}", int(k), int(n) + 1, float(l[k, n]),
                                 "bits on a zero-bandwidth link"))

    # bandwidth sum on active (non-idle) slots
    total = bw.total()
    active = (total > 0) | (z.l_off_ue > 0) | (z.l_off_uav > 0) | (z.l_down_uav > 0)
    gap = np.abs(total - scn.bandwidth_total)
    for k, n in zip(*np.nonzero(active & (gap > hz_tol))):
        out.append(Violation("bandwidth_sum", int(k), int(n) + 1, float(total[k, n] - scn.bandwidth_total),
                             "Hz away from the total band"))

    proc = processed_bits(scn, z)
    recv = z.l_off_ue
    local = scn.slot_len * z.f_ue / scn.cycles_per_bit[:, None]
    for k in range(scn.num_ues):
        scale = rel_tol * scn.task_bits[k]
        o = scn.output_ratio[k]
        cum_recv = np.cumsum(recv[k])
        cum_proc = np.cumsum(proc[k])
        cum_down = np.cumsum(z.l_down_uav[k])
        # causality of processing: slots n = 2..N-1
        for n in range(2, n_slots):
            excess = cum_proc[n - 1] - cum_recv[n - 2]
            if excess > scale:
                out.append(Violation("causality:processing", k, n, float(excess),
                                     "bits processed before reception"))
        # causality of download: slots n = 3..N
        for n in range(3, n_slots + 1):
            excess = cum_down[n - 1] - o * cum_proc[n - 2]
            if excess > scale:
                out.append(Violation("causality:download", k, n, float(excess),
                                     "bits downloaded before they were produced"))
        gap_proc = cum_proc[-1] - cum_recv[-1]
        if abs(gap_proc) > bit_tol:
            out.append(Violation("balance:relay", k, None, float(gap_proc),
                                 "bits processed minus bits received"))
        gap_down = cum_down[-1] - o * cum_proc[-1]
        if abs(gap_down) > bit_tol:
            out.append(Violation("balance:download", k, None, float(gap_down),
                                 "bits downloaded minus output produced"))
        gap_task = local[k].sum() + cum_recv[-1] - scn.task_bits[k]
        if abs(gap_task) > bit_tol:
            out.append(Violation("balance:task", k, None, float(gap_task),
                                 "local plus offloaded bits minus task size"))

    wp = traj.waypoints
    if not np.array_equal(wp[0], scn.uav_start):
        out.append(Violation("endpoint:start", None, 0, float(np.linalg.norm(wp[0] - scn.uav_start))))
    if not np.array_equal(wp[-1], scn.uav_end):
        out.append(Violation("endpoint:end", None, n_slots, float(np.linalg.norm(wp[-1] - scn.uav_end))))
    speeds = traj.speeds
    for n in np.nonzero(speeds > scn.v_max * (1 + rel_tol))[0]:
        out.append(Violation("speed", None, int(n) + 1, float(speeds[n] - scn.v_max), "m/s above v_max"))
    return out


def local_only_schedule(scn: Scenario) -> Schedule:
    """Every UE computes its whole task on board at constant frequency."""
    z = Schedule.zeros(scn)
    f = scn.task_bits * scn.cycles_per_bit / scn.horizon
    z.f_ue[:] = f[:, None]
    return z


def nominal_uav_speed(scn: Scenario) -> float:
    return float(np.linalg.norm(scn.uav_end - scn.uav_start)) / scn.horizon

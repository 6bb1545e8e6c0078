"""Alternating optimisation of schedule, bandwidth and trajectory, plus baselines.

The proposed scheme starts from the straight chord and an equal band
split, then repeats three steps: scheduling, bandwidth allocation and
trajectory design, each for the other two fixed.  A step's output replaces
the incumbent only if it does not raise the weighted energy, so the trace
of the outer loop is non-increasing.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .bandwidth import equal_split, solve_p12
from .model import (
    BandwidthPlan,
    EnergyReport,
    Scenario,
    Schedule,
    Trajectory,
    check_feasibility,
    local_only_schedule,
    straight_trajectory,
    trajectory_gains,
    wsec,
)
from .scheduler import DualState, solve_p11
from .trajectory import solve_p13

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "direct_trajectory", "offloading_only", "equal_bandwidth", "local_computing")


@dataclass(frozen=True)
class SolveConfig:
    """Knobs of the outer loop and its subproblem solvers.

    ``outer_tol`` is the stopping threshold on the change of the weighted
    energy between outer iterations (J).  ``inner_tol`` is the relative
    duality gap at which a scheduling solve stops.
    """

    outer_tol: float = 1e-4
    inner_tol: float = 1e-6
    max_outer: int = 10
    scheme: str = "proposed"
    max_dual_iter: int = 500
    sca_tol: float = 1e-4
    sca_max_iter: int = 30
    polish: bool = True

    def __post_init__(self):
        if not (self.outer_tol > 0 and self.inner_tol > 0 and self.sca_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.max_outer < 2:
            raise ValueError("max_outer must be at least 2")


@dataclass
class IterationRecord:
    index: int  # outer iteration (the first solved iterate is 2)
    wsec: float
    ue_energy: float
    uav_energy: float
    dual_evaluations: int
    scheduling_gap: float
    sca_iterations: int
    kept: tuple  # which steps kept their incumbent


@dataclass
class SolveResult:
    scheme: str
    schedule: Schedule
    bandwidth: BandwidthPlan
    trajectory: Trajectory
    report: EnergyReport
    trace: list = field(default_factory=list)
    records: list = field(default_factory=list)
    converged: bool = False
    flags: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def wsec(self) -> float:
        return self.report.wsec


def _energy(scn, z, bw, traj) -> float:
    return wsec(scn, z, bw, traj).wsec


def _supports(z: Schedule, bw: BandwidthPlan) -> bool:
    return bool(np.all(bw.b_off_ue[z.l_off_ue > 0] > 0) and np.all(bw.b_off_uav[z.l_off_uav > 0] > 0)
                and np.all(bw.b_down_uav[z.l_down_uav > 0] > 0))


def solve(scn: Scenario, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Run one scheme on one scenario."""
    t0 = time.perf_counter()
    if cfg.scheme == "local_computing":
        res = baseline_local_computing(scn)
    else:
        res = _alternate(scn, cfg)
    res.wall_time = time.perf_counter() - t0
    return res


def _alternate(scn: Scenario, cfg: SolveConfig) -> SolveResult:
    fixed_traj = cfg.scheme == "direct_trajectory"
    allow_local = cfg.scheme != "offloading_only"
    equal_bw = cfg.scheme == "equal_bandwidth"

    traj = straight_trajectory(scn)
    bw = equal_split(scn)
    z: Optional[Schedule] = None
    duals: Optional[DualState] = None
    trace: list[float] = []
    records: list[IterationRecord] = []
    flags: list[str] = []
    converged = False
    zeta = 1
    while zeta < cfg.max_outer:
        kept = []
        # step 1: scheduling
        p11 = solve_p11(scn, traj, bw, warm=duals, tol=cfg.inner_tol, max_iter=cfg.max_dual_iter,
                        allow_local=allow_local)
        if not p11.converged:
            flags.append(f"scheduling-gap@{zeta + 1}")
        if z is None or _energy(scn, p11.schedule, bw, traj) <= _energy(scn, z, bw, traj):
            z, duals = p11.schedule, p11.duals
        else:
            kept.append("schedule")
        # step 2: bandwidth
        if equal_bw:
            bw = equal_split(scn, z)
        else:
            new_bw, _ = solve_p12(scn, traj, z)
            if _supports(z, bw) and _energy(scn, z, bw, traj) < _energy(scn, z, new_bw, traj):
                kept.append("bandwidth")
            else:
                bw = new_bw
        # step 3: trajectory
        sca_iters = 0
        if not fixed_traj:
            p13 = solve_p13(scn, z, bw, traj, rel_tol=cfg.sca_tol, max_iter=cfg.sca_max_iter,
                            polish=cfg.polish)
            sca_iters = p13.state.iteration
            if p13.state.degenerate:
                flags.append("degenerate-endpoints")
            if _energy(scn, z, bw, p13.trajectory) <= _energy(scn, z, bw, traj):
                traj = p13.trajectory
            else:
                kept.append("trajectory")
        zeta += 1
        rep = wsec(scn, z, bw, traj)
        trace.append(rep.wsec)
        records.append(IterationRecord(zeta, rep.wsec, rep.ue_weighted, rep.uav_total,
                                       p11.iterations, p11.gap, sca_iters, tuple(kept)))
        log.info("%s: iteration %d, WSEC %.9g J", cfg.scheme, zeta, rep.wsec)
        if zeta > 2 and abs(trace[-1] - trace[-2]) < cfg.outer_tol:
            converged = True
            break
    if not converged:
        flags.append("max-outer")
    violations = check_feasibility(scn, z, bw, traj)
    if violations:
        flags.append(f"infeasible:{len(violations)}")
        log.warning("%s: %d constraint violation(s), first: %s", cfg.scheme, len(violations), violations[0])
    return SolveResult(cfg.scheme, z, bw, traj, wsec(scn, z, bw, traj), trace, records, converged,
                       sorted(set(flags), key=flags.index))


def baseline_local_computing(scn: Scenario) -> SolveResult:
    """Every UE computes its own task at constant frequency; nothing is sent."""
    z = local_only_schedule(scn)
    bw = BandwidthPlan.zeros(scn)
    traj = straight_trajectory(scn)
    rep = wsec(scn, z, bw, traj)
    return SolveResult("local_computing", z, bw, traj, rep, [rep.wsec], [], True, [])


def baseline_direct_trajectory(scn: Scenario, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    return solve(scn, _with_scheme(cfg, "direct_trajectory"))


def baseline_offloading_only(scn: Scenario, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    return solve(scn, _with_scheme(cfg, "offloading_only"))


def baseline_equal_bandwidth(scn: Scenario, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    return solve(scn, _with_scheme(cfg, "equal_bandwidth"))


def _with_scheme(cfg: SolveConfig, scheme: str) -> SolveConfig:
    from dataclasses import replace

    return replace(cfg, scheme=scheme)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

SWEEP_PARAMS = {
    "I": ("task_bits", 1e6),  # grid in Mbit
    "T": ("horizon", 1.0),
    "O": ("output_ratio", 1.0),
    "w_U": ("weight_uav", 1.0),
}


@dataclass
class SweepRow:
    parameter: str
    value: float
    scheme: str
    wsec: float
    ue_energy: float
    uav_energy: float
    converged: bool
    outer_iterations: int
    wall_time: float


def sweep(template: Scenario, parameter: str, grid: Iterable[float],
          schemes: Sequence[str] = SCHEMES, cfg: SolveConfig = SolveConfig(),
          workers: int = 1) -> list[SweepRow]:
    """WSEC of each scheme at every grid value of one parameter.

    ``parameter`` is one of ``I`` (uniform task size, Mbit), ``T`` (s),
    ``O`` (uniform output ratio) or ``w_U``.  With ``workers > 1`` the grid
    points run on a thread pool; rows come back in grid order either way.
    """
    rows = []
    for _, results in sweep_results(template, parameter, grid, schemes, cfg, workers):
        rows.extend(results)
    return [_row(parameter, value, res) for value, res in rows]


def sweep_results(template: Scenario, parameter: str, grid: Iterable[float],
                  schemes: Sequence[str] = SCHEMES, cfg: SolveConfig = SolveConfig(),
                  workers: int = 1) -> list[tuple[Scenario, list[tuple[float, SolveResult]]]]:
    """Like :func:`sweep` but keeps every scenario and full result."""
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {parameter!r}; choose from {', '.join(SWEEP_PARAMS)}")
    field_name, unit = SWEEP_PARAMS[parameter]
    grid = [float(v) for v in grid]
    for scheme in schemes:
        _with_scheme(cfg, scheme)  # fail early on a bad name

    def point(value):
        scn = template.with_changes(**{field_name: value * unit})
        return scn, [(value, solve(scn, _with_scheme(cfg, s))) for s in schemes]

    if workers > 1 and len(grid) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(point, grid))
    return [point(v) for v in grid]


def _row(parameter: str, value: float, res: SolveResult) -> SweepRow:
    return SweepRow(parameter, value, res.scheme, res.wsec, res.report.ue_weighted,
                    res.report.uav_total, res.converged, len(res.trace), res.wall_time)


# ---------------------------------------------------------------------------
# reference solvers for verification
# ---------------------------------------------------------------------------

def oracle_p11(scn: Scenario, traj: Trajectory, bw: BandwidthPlan, allow_local: bool = True,
               mbit: float = 1e6) -> float:
    """Minimum scheduling objective from a generic conic solver.

    Independent of the dual machinery: the convex program is stated
    directly (per UE, bits in Mbit) and handed to cvxpy.  Returns ``inf``
    when the program is infeasible.  Meant for small instances in tests.
    """
    import cvxpy as cp

    h_ap, h_ue = trajectory_gains(scn, traj)
    n, d, n0 = scn.num_slots, scn.subslot_len, scn.noise_power
    ln2 = math.log(2.0)
    idx = np.arange(n)
    total = 0.0
    for k in range(scn.num_ues):
        c, big_i, o = scn.cycles_per_bit[k], scn.task_bits[k] / mbit, scn.output_ratio[k]
        loc = cp.Variable(nonneg=True)
        off, comp, fwd, down = (cp.Variable(n, nonneg=True) for _ in range(4))
        cons = [off[idx > n - 3] == 0, comp[(idx < 1) | (idx > n - 2)] == 0,
                fwd[(idx < 1) | (idx > n - 2)] == 0, down[idx < 2] == 0]
        if not allow_local:
            cons.append(loc == 0)
        obj = (scn.weight_ue[k] * scn.horizon * scn.cap_ue[k] * (c * mbit / scn.horizon) ** 3 * cp.power(loc, 3)
               + scn.weight_uav * d * scn.cap_uav * (c * mbit / d) ** 3 * cp.sum(cp.power(comp, 3)))
        for var, band, gain, w in ((off, bw.b_off_ue[k], h_ue[k], scn.weight_ue[k]),
                                   (fwd, bw.b_off_uav[k], h_ap, scn.weight_uav),
                                   (down, bw.b_down_uav[k], h_ue[k], scn.weight_uav)):
            live = band > 0
            if np.any(~live):
                cons.append(var[~live] == 0)
            if np.any(live):
                a = w * d * n0 / gain[live]
                r = ln2 * mbit / (d * band[live])
                obj = obj + cp.sum(cp.multiply(a, cp.exp(cp.multiply(r, var[live])) - 1.0))
        proc = comp + fwd
        cons += [loc + cp.sum(off) == big_i, cp.sum(proc) == cp.sum(off), cp.sum(down) == o * cp.sum(proc)]
        cons += [cp.sum(proc[1:m]) <= cp.sum(off[:m - 1]) for m in range(2, n)]
        cons += [cp.sum(down[2:m]) <= o * cp.sum(proc[1:m - 1]) for m in range(3, n + 1)]
        prob = cp.Problem(cp.Minimize(obj), cons)
        try:
            prob.solve(solver=cp.CLARABEL)
        except cp.SolverError:
            return math.inf
        if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return math.inf
        total += float(prob.value)
    return total


def oracle_p12(scn: Scenario, traj: Trajectory, z: Schedule, mhz: float = 1e6) -> float:
    """Minimum weighted transmission energy over all band splits (cvxpy).

    Each (UE, slot) pair is an independent convex program in the shares of
    its active streams.  Returns ``inf`` if some slot is infeasible.
    """
    import cvxpy as cp

    h_ap, h_ue = trajectory_gains(scn, traj)
    d, n0, ln2 = scn.subslot_len, scn.noise_power, math.log(2.0)
    big = scn.bandwidth_total / mhz
    total = 0.0
    for k in range(scn.num_ues):
        for n in range(scn.num_slots):
            streams = [(z.l_off_ue[k, n], h_ue[k, n], scn.weight_ue[k]),
                       (z.l_off_uav[k, n], h_ap[n], scn.weight_uav),
                       (z.l_down_uav[k, n], h_ue[k, n], scn.weight_uav)]
            live = [(l, h, w) for l, h, w in streams if l > 0]
            if not live:
                continue
            b = cp.Variable(len(live), pos=True)
            terms = [w * d * n0 / h * (cp.exp(ln2 * l / (d * mhz) * cp.inv_pos(b[i])) - 1.0)
                     for i, (l, h, w) in enumerate(live)]
            prob = cp.Problem(cp.Minimize(cp.sum(cp.hstack(terms))), [cp.sum(b) <= big])
            try:
                prob.solve(solver=cp.CLARABEL)
            except cp.SolverError:
                return math.inf
            if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
                return math.inf
            total += float(prob.value)
    return total

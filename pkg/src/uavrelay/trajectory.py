"""Trajectory design for a fixed schedule and bandwidth plan.

With bits and bandwidth fixed, every transmission energy is a positive
multiple of ``||u - p||**2 + H**2`` for the relevant ground point ``p``, so
the non-convexity sits entirely in the ``1/v`` propulsion term.  It is
handled by successive convex approximation: a slack speed ``vt <= v``
replaces ``v`` in that term, and ``vt**2 tau**2 <= ||du||**2`` is replaced
by its first-order lower bound at the current anchor.  Each convex
subproblem is solved by a log-barrier Newton method written for this
chain structure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    V_FLOOR,
    BandwidthPlan,
    Scenario,
    Schedule,
    Trajectory,
    straight_trajectory,
    wsec,
)

log = logging.getLogger(__name__)


@dataclass
class ConvexObjective:
    """Trajectory-dependent part of the weighted energy.

    ``quad[n]`` and ``lin[n]`` give the slot-``n`` transmission energy as
    ``quad[n] * ||u_n||**2 - 2 lin[n] . u_n + const[n]``.
    """

    quad: np.ndarray  # (N,)
    lin: np.ndarray  # (N, 2)
    const: np.ndarray  # (N,)
    fly_cubic: float  # multiplies ||du||**3
    fly_inverse: float  # multiplies 1/vt

    def transmission(self, positions: np.ndarray) -> np.ndarray:
        return (self.quad * np.sum(positions ** 2, axis=1)
                - 2.0 * np.sum(self.lin * positions, axis=1) + self.const)

    def value(self, waypoints: np.ndarray, vt: np.ndarray) -> float:
        du = np.diff(waypoints, axis=0)
        seg = np.linalg.norm(du, axis=1)
        return float(self.transmission(waypoints[1:]).sum()
                     + self.fly_cubic * np.sum(seg ** 3) + self.fly_inverse * np.sum(1.0 / vt))


def link_coefficients(scn: Scenario, z: Schedule, bw: BandwidthPlan) -> tuple[np.ndarray, ...]:
    """Weighted energy per unit of ``(distance**2 + H**2)`` for each link, ``(K, N)``."""
    d, n0, h0 = scn.subslot_len, scn.noise_power, scn.ref_gain

    def coef(bits, band, weight):
        pos = bits > 0
        safe = np.where(pos, band, 1.0)
        with np.errstate(over="ignore"):
            val = weight * d * n0 * np.expm1(math.log(2.0) * bits / (d * safe)) / h0
        return np.where(pos, val, 0.0)

    w_ue = scn.weight_ue[:, None]
    return (coef(z.l_off_ue, bw.b_off_ue, w_ue),
            coef(z.l_off_uav, bw.b_off_uav, scn.weight_uav),
            coef(z.l_down_uav, bw.b_down_uav, scn.weight_uav))


def build_convex_objective(scn: Scenario, z: Schedule, bw: BandwidthPlan) -> ConvexObjective:
    c_ue, c_ap, c_down = link_coefficients(scn, z, bw)
    c_k = c_ue + c_down  # both terms use the distance to UE k
    quad = c_k.sum(axis=0) + c_ap.sum(axis=0)
    lin = c_k.T @ scn.ue_pos + c_ap.sum(axis=0)[:, None] * scn.ap_pos[None, :]
    h2 = scn.altitude ** 2
    const = (c_k * (np.sum(scn.ue_pos ** 2, axis=1)[:, None] + h2)).sum(axis=0) \
        + c_ap.sum(axis=0) * (float(np.sum(scn.ap_pos ** 2)) + h2)
    tau = scn.slot_len
    return ConvexObjective(quad, lin, const, scn.weight_uav * scn.fly_coeff_1 / tau ** 2,
                           scn.weight_uav * tau * scn.fly_coeff_2)


# ---------------------------------------------------------------------------
# convex subproblem
# ---------------------------------------------------------------------------

@dataclass
class BarrierResult:
    waypoints: np.ndarray
    vt: np.ndarray
    value: float
    newton_steps: int
    duality_gap: float  # m / t bound at exit
    converged: bool


class _Subproblem:
    """Convexified trajectory problem around an anchor.

    Free variables are the interior waypoints ``u_1..u_{N-1}`` and the slack
    speeds ``vt_1..vt_N``.  Constraints per segment ``n``:

    * ``||du_n||**2 <= (v_max tau)**2``
    * ``vt_n >= v_floor``
    * ``2 da_n . du_n - ||da_n||**2 - tau**2 vt_n**2 >= 0`` with ``da`` the
      anchor segments (a lower bound on ``||du_n||**2 - tau**2 vt_n**2``).
    """

    def __init__(self, scn: Scenario, obj: ConvexObjective, anchor: np.ndarray, v_floor: float):
        self.scn, self.obj = scn, obj
        self.n = scn.num_slots
        self.tau = scn.slot_len
        self.vmax2 = (scn.v_max * self.tau) ** 2
        self.v_floor = v_floor
        self.da = np.diff(anchor, axis=0)
        self.qa = np.sum(self.da ** 2, axis=1)
        self.start = anchor[0]
        self.end = anchor[-1]
        n = self.n
        # segment differences as a linear map of the free waypoints
        dmat = np.zeros((n, n - 1))
        dmat[np.arange(n - 1), np.arange(n - 1)] = 1.0
        dmat[np.arange(1, n), np.arange(n - 1)] = -1.0
        self.dmat = dmat

    def unpack(self, x):
        n = self.n
        u = x[:2 * (n - 1)].reshape(n - 1, 2)
        return u, x[2 * (n - 1):]

    def waypoints(self, x):
        u, _ = self.unpack(x)
        return np.vstack([self.start, u, self.end])

    def constraints(self, x):
        wp = self.waypoints(x)
        _, vt = self.unpack(x)
        du = np.diff(wp, axis=0)
        g1 = self.vmax2 - np.sum(du ** 2, axis=1)
        g2 = vt - self.v_floor
        g3 = 2.0 * np.sum(self.da * du, axis=1) - self.qa - self.tau ** 2 * vt ** 2
        return du, g1, g2, g3

    def feasible(self, x):
        _, g1, g2, g3 = self.constraints(x)
        return bool(np.all(g1 > 0) and np.all(g2 > 0) and np.all(g3 > 0))

    def objective(self, x):
        u, vt = self.unpack(x)
        return self.obj.value(self.waypoints(x), vt)

    def barrier_value(self, x, t):
        _, g1, g2, g3 = self.constraints(x)
        if np.any(g1 <= 0) or np.any(g2 <= 0) or np.any(g3 <= 0):
            return math.inf
        return t * self.objective(x) - np.sum(np.log(g1)) - np.sum(np.log(g2)) - np.sum(np.log(g3))

    def derivatives(self, x, t):
        """Gradient and Hessian of ``t f - sum log g`` in the free variables."""
        n, tau = self.n, self.tau
        u, vt = self.unpack(x)
        du, g1, g2, g3 = self.constraints(x)
        ob = self.obj
        seg = np.linalg.norm(du, axis=1)

        # per-segment derivatives in (du, vt): grad (n, 3), hess (n, 3, 3)
        grad = np.zeros((n, 3))
        hess = np.zeros((n, 3, 3))
        eye2 = np.eye(2)
        outer = du[:, :, None] * du[:, None, :]
        safe = np.where(seg > 0, seg, 1.0)
        grad[:, :2] += t * 3.0 * ob.fly_cubic * seg[:, None] * du
        hess[:, :2, :2] += t * 3.0 * ob.fly_cubic * (
            seg[:, None, None] * eye2 + np.where(seg[:, None, None] > 0, outer / safe[:, None, None], 0.0))
        grad[:, 2] += -t * ob.fly_inverse / vt ** 2
        hess[:, 2, 2] += 2.0 * t * ob.fly_inverse / vt ** 3
        # speed cap
        grad[:, :2] += 2.0 * du / g1[:, None]
        hess[:, :2, :2] += 2.0 * eye2 / g1[:, None, None] + 4.0 * outer / g1[:, None, None] ** 2
        # slack floor
        grad[:, 2] += -1.0 / g2
        hess[:, 2, 2] += 1.0 / g2 ** 2
        # linearised speed bound
        dg = np.concatenate([2.0 * self.da, (-2.0 * tau ** 2 * vt)[:, None]], axis=1)
        grad += -dg / g3[:, None]
        hess += dg[:, :, None] * dg[:, None, :] / g3[:, None, None] ** 2
        hess[:, 2, 2] += 2.0 * tau ** 2 / g3

        m = n - 1
        nv = 2 * m + n
        g_out = np.zeros(nv)
        h_out = np.zeros((nv, nv))
        dm = self.dmat
        for a in range(2):
            g_out[a:2 * m:2] += dm.T @ grad[:, a]
            for b in range(2):
                h_out[a:2 * m:2, b:2 * m:2] += dm.T @ (hess[:, a, b][:, None] * dm)
            cross = dm.T * hess[:, a, 2][None, :]
            h_out[a:2 * m:2, 2 * m:] += cross
            h_out[2 * m:, a:2 * m:2] += cross.T
        g_out[2 * m:] += grad[:, 2]
        h_out[2 * m:, 2 * m:] += np.diag(hess[:, 2, 2])
        # transmission terms of the free waypoints
        g_out[:2 * m] += t * (2.0 * ob.quad[:m, None] * u - 2.0 * ob.lin[:m]).ravel()
        h_out[np.arange(2 * m), np.arange(2 * m)] += t * 2.0 * np.repeat(ob.quad[:m], 2)
        return g_out, h_out

    def solve(self, x0, gap_tol: float = 1e-9, max_newton: int = 400) -> BarrierResult:
        """Barrier method from a strictly feasible ``x0``."""
        x = x0.copy()
        m_con = 3 * self.n
        f0 = abs(self.objective(x)) + 1.0
        t = m_con / f0  # first centring weighs barrier and objective alike
        steps = 0
        converged = False
        while True:
            for _ in range(50):
                g, h = self.derivatives(x, t)
                try:
                    dx = -np.linalg.solve(h, g)
                except np.linalg.LinAlgError:
                    dx = -np.linalg.lstsq(h, g, rcond=None)[0]
                dec = float(-g @ dx)
                steps += 1
                if dec / 2.0 <= 1e-10 or steps >= max_newton:
                    break
                s = 1.0
                fx = self.barrier_value(x, t)
                while s > 1e-12:
                    xn = x + s * dx
                    fn = self.barrier_value(xn, t)
                    if fn <= fx - 0.25 * s * dec:
                        break
                    s *= 0.5
                else:
                    break
                x = xn
            gap = m_con / t
            if gap <= gap_tol * (abs(self.objective(x)) + 1e-12):
                converged = True
                break
            if steps >= max_newton:
                break
            t *= 20.0
        _, vt = self.unpack(x)
        return BarrierResult(self.waypoints(x), vt.copy(), self.objective(x), steps,
                             m_con / t, converged)

    def kkt_residual(self, res: BarrierResult) -> dict:
        """Scaled KKT residuals of a barrier solution.

        Multipliers are recovered as ``1 / (t g)``; stationarity is then
        satisfied up to the Newton tolerance and complementary slackness
        equals ``1 / t`` per constraint.
        """
        x = np.concatenate([res.waypoints[1:-1].ravel(), res.vt])
        _, g1, g2, g3 = self.constraints(x)
        t = 3 * self.n / res.duality_gap
        g, _ = self.derivatives(x, t)
        scale = t * (abs(res.value) + 1.0)
        return {
            "stationarity": float(np.max(np.abs(g)) / scale),
            "primal": float(max(0.0, -min(g1.min(), g2.min(), g3.min()))),
            "complementarity": float(1.0 / t / (abs(res.value) + 1.0)),
        }


# ---------------------------------------------------------------------------
# SCA driver
# ---------------------------------------------------------------------------

@dataclass
class ScaState:
    anchor: Trajectory
    vt: np.ndarray
    iteration: int = 0
    history: list = field(default_factory=list)  # true weighted energy of accepted anchors
    approx_history: list = field(default_factory=list)
    rejected: int = 0
    degenerate: bool = False
    flags: list = field(default_factory=list)


def _slack_start(anchor: np.ndarray, scn: Scenario, v_floor: float) -> Optional[np.ndarray]:
    """Slack speeds strictly inside ``(v_floor, v)`` per anchor segment, or ``None``."""
    v = np.linalg.norm(np.diff(anchor, axis=0), axis=1) / scn.slot_len
    if np.any(v <= v_floor * (1 + 1e-9)) or np.any(v >= scn.v_max * (1 - 1e-12)):
        return None
    return np.sqrt(v_floor * v)


def loop_start(scn: Scenario, v_floor: float = V_FLOOR) -> Optional[Trajectory]:
    """Chord plus one full circle, so every slot moves faster than ``v_floor``.

    Used when the straight chord is too slow (or empty) to anchor the
    linearisation.  Returns ``None`` if the speed cap leaves no room.
    """
    n, tau = scn.num_slots, scn.slot_len
    chord = scn.uav_end - scn.uav_start
    s = np.linspace(0.0, 1.0, n + 1)
    base = scn.uav_start[None, :] + s[:, None] * chord[None, :]
    step_chord = float(np.linalg.norm(chord)) / n
    lo = (2.0 * v_floor * tau + step_chord) / (2.0 * math.sin(math.pi / n))
    hi = (0.9 * scn.v_max * tau - step_chord) / (2.0 * math.sin(math.pi / n))
    if hi <= lo:
        return None
    r = min(math.sqrt(lo * hi), hi) if lo > 0 else hi
    ang = 2.0 * math.pi * s
    circle = r * np.stack([np.cos(ang) - 1.0, np.sin(ang)], axis=1)
    wp = base + circle
    wp[0], wp[-1] = scn.uav_start, scn.uav_end
    return Trajectory(wp, tau)


def true_energy(scn: Scenario, z: Schedule, bw: BandwidthPlan, traj: Trajectory) -> float:
    return wsec(scn, z, bw, traj).wsec


def sca_step(scn: Scenario, z: Schedule, bw: BandwidthPlan, state: ScaState,
             obj: Optional[ConvexObjective] = None, v_floor: float = V_FLOOR,
             max_halvings: int = 8) -> tuple[Trajectory, ScaState]:
    """One convexify-and-solve round; the move is accepted only if it lowers the true energy."""
    obj = obj or build_convex_objective(scn, z, bw)
    anchor = state.anchor.waypoints
    vt0 = _slack_start(anchor, scn, v_floor)
    state.iteration += 1
    if vt0 is None:
        state.flags.append("anchor-not-interior")
        return state.anchor, state
    sub = _Subproblem(scn, obj, anchor, v_floor)
    x0 = np.concatenate([anchor[1:-1].ravel(), vt0])
    res = sub.solve(x0)
    if not res.converged:
        state.flags.append("inner-not-converged")
    base = state.history[-1] if state.history else true_energy(scn, z, bw, state.anchor)
    cand = res.waypoints
    step = 1.0
    for _ in range(max_halvings + 1):
        traj = Trajectory(anchor + step * (cand - anchor), scn.slot_len)
        traj.waypoints[0], traj.waypoints[-1] = scn.uav_start, scn.uav_end
        e = true_energy(scn, z, bw, traj)
        if e <= base:
            new_vt = res.vt if step == 1.0 else np.minimum(res.vt, traj.speeds)
            state.anchor, state.vt = traj, new_vt
            state.history.append(e)
            state.approx_history.append(res.value)
            return traj, state
        state.rejected += 1
        step *= 0.5
    state.history.append(base)
    state.approx_history.append(res.value)
    return state.anchor, state


@dataclass
class P13Result:
    trajectory: Trajectory
    state: ScaState
    energy: float
    converged: bool


def solve_p13(scn: Scenario, z: Schedule, bw: BandwidthPlan, u_init: Optional[Trajectory] = None,
              *, rel_tol: float = 1e-4, max_iter: int = 30, v_floor: float = V_FLOOR,
              polish: bool = True) -> P13Result:
    """SCA on the trajectory until the approximate objective settles.

    With ``polish`` the SCA output is refined by :func:`polish_trajectory`.
    """
    init = u_init if u_init is not None else straight_trajectory(scn)
    degenerate = False
    if _slack_start(init.waypoints, scn, v_floor) is None:
        loop = loop_start(scn, v_floor)
        degenerate = bool(np.allclose(scn.uav_start, scn.uav_end)) or \
            float(np.linalg.norm(scn.uav_end - scn.uav_start)) / scn.horizon <= v_floor
        if loop is not None and _slack_start(loop.waypoints, scn, v_floor) is not None:
            cand = loop
        else:
            cand = straight_trajectory(scn)
        # keep the caller's path if it is at least as good as the replacement start
        if u_init is None or true_energy(scn, z, bw, cand) <= true_energy(scn, z, bw, init):
            init = cand
    obj = build_convex_objective(scn, z, bw)
    state = ScaState(init.copy(), np.zeros(scn.num_slots), degenerate=degenerate)
    if degenerate:
        state.flags.append("degenerate-endpoints")
    state.history.append(true_energy(scn, z, bw, state.anchor))
    converged = False
    prev = None
    for _ in range(max_iter):
        before = len(state.flags)
        _, state = sca_step(scn, z, bw, state, obj, v_floor)
        if "anchor-not-interior" in state.flags[before:]:
            break
        cur = state.approx_history[-1]
        if prev is not None and abs(cur - prev) <= rel_tol * abs(prev):
            converged = True
            break
        prev = cur
    if polish and "anchor-not-interior" not in state.flags:
        cand, ok = polish_trajectory(scn, obj, state.anchor, v_floor)
        e = true_energy(scn, z, bw, cand)
        if ok and e < state.history[-1]:
            state.anchor, state.vt = cand, cand.speeds
            state.history.append(e)
            state.flags.append("polished")
    return P13Result(state.anchor, state, state.history[-1], converged)


def polish_trajectory(scn: Scenario, obj: ConvexObjective, traj: Trajectory,
                      v_floor: float = V_FLOOR, max_iter: int = 2000) -> tuple[Trajectory, bool]:
    """Local quasi-Newton descent on the exact (unconvexified) trajectory energy.

    SCA converges linearly near its limit because the linearised speed bound
    only lets segments turn a little per round.  Starting from the SCA
    output, this runs L-BFGS on the true energy of the free waypoints and
    keeps the result only if it is better and every slot speed stays in
    ``[v_floor, v_max]``.
    """
    from scipy.optimize import minimize

    n, tau = scn.num_slots, scn.slot_len
    a1 = obj.fly_cubic
    b = scn.weight_uav * scn.fly_coeff_2 * tau ** 2
    start, end = traj.waypoints[0], traj.waypoints[-1]

    def energy(x):
        u = x.reshape(n - 1, 2)
        wp = np.vstack([start, u, end])
        d = np.diff(wp, axis=0)
        s = np.linalg.norm(d, axis=1)
        if np.any(s <= 0):
            return math.inf, np.zeros_like(x)
        val = obj.transmission(wp[1:]).sum() + np.sum(a1 * s ** 3 + b / s)
        gd = (3.0 * a1 * s - b / s ** 3)[:, None] * d
        g = gd[:-1] - gd[1:] + 2.0 * obj.quad[:n - 1, None] * u - 2.0 * obj.lin[:n - 1]
        return float(val), g.ravel()

    x0 = traj.waypoints[1:-1].ravel()
    f0, _ = energy(x0)
    res = minimize(energy, x0, jac=True, method="L-BFGS-B",
                   options=dict(maxiter=max_iter, maxcor=30, ftol=1e-15, gtol=1e-10))
    if not res.fun < f0:
        return traj, False
    cand = Trajectory(np.vstack([start, res.x.reshape(n - 1, 2), end]), tau)
    v = cand.speeds
    if np.any(v < v_floor) or np.any(v > scn.v_max):
        return traj, False
    return cand, True

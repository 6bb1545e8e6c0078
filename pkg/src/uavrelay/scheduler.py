"""Computation-resource scheduling for a fixed trajectory and bandwidth plan.

The scheduling subproblem is convex and separable per UE.  For given
multipliers it has a closed-form minimiser (:func:`closed_form_schedule`);
the multipliers of the two causality chains are driven by projected
subgradient steps and the three equality multipliers of every UE are
recovered by nested one-dimensional searches (:func:`solve_equality_duals`).
Dual iterates are only approximately primal feasible, so every iterate is
passed through :func:`restore_feasibility` before it is scored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (
    BandwidthPlan,
    Scenario,
    Schedule,
    Trajectory,
    scheduling_objective,
    trajectory_gains,
)
from .numerics import StepSchedule, solve_increasing

log = logging.getLogger(__name__)

LN2 = math.log(2.0)


@dataclass
class DualState:
    """Multipliers of the scheduling subproblem.

    ``lam`` and ``mu`` have shape ``(K, N)`` and are zero outside their
    slots (``lam`` on slots ``2..N-1``, ``mu`` on slots ``3..N``).
    """

    lam: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    beta: np.ndarray

    @classmethod
    def zeros(cls, scn: Scenario) -> "DualState":
        k, n = scn.num_ues, scn.num_slots
        return cls(np.zeros((k, n)), np.zeros((k, n)), np.zeros(k), np.zeros(k), np.zeros(k))

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.mu.copy(), self.eta.copy(), self.rho.copy(),
                         self.beta.copy())

    # suffix sums; index i holds the value for slot i + 1
    @property
    def lam_tilde(self) -> np.ndarray:
        return _suffix(self.lam)

    @property
    def lam_hat(self) -> np.ndarray:
        return _shift_left(_suffix(self.lam))

    @property
    def mu_tilde(self) -> np.ndarray:
        return _suffix(self.mu)

    @property
    def mu_hat(self) -> np.ndarray:
        return _shift_left(_suffix(self.mu))


def _suffix(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[:, ::-1], axis=1)[:, ::-1]


def _shift_left(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:, :-1] = a[:, 1:]
    return out


def slot_masks(num_slots: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index masks of the UE-offload, UAV-relay and UAV-download slots."""
    idx = np.arange(num_slots)
    return idx <= num_slots - 3, (idx >= 1) & (idx <= num_slots - 2), idx >= 2


@dataclass
class PriorityIndicators:
    """log2 priority of each link; ``-inf`` where the link has no bandwidth."""

    phi_ue: np.ndarray
    phi_uav_off: np.ndarray
    phi_uav_down: np.ndarray


def _log2_ratio(b, h, w, n0):
    with np.errstate(divide="ignore"):
        return np.where(b > 0, np.log2(np.where(b > 0, b, 1.0) * h / (w * n0 * LN2)), -np.inf)


def compute_indicators(scn: Scenario, traj: Trajectory, bw: BandwidthPlan) -> PriorityIndicators:
    h_ap, h_ue = trajectory_gains(scn, traj)
    m_ue, m_relay, m_down = slot_masks(scn.num_slots)
    n0 = scn.noise_power
    phi_ue = _log2_ratio(bw.b_off_ue, h_ue, scn.weight_ue[:, None], n0)
    phi_off = _log2_ratio(bw.b_off_uav, h_ap[None, :], scn.weight_uav, n0)
    phi_down = _log2_ratio(bw.b_down_uav, h_ue, scn.weight_uav, n0)
    phi_ue[:, ~m_ue] = -np.inf
    phi_off[:, ~m_relay] = -np.inf
    phi_down[:, ~m_down] = -np.inf
    return PriorityIndicators(phi_ue, phi_off, phi_down)


class _Terms:
    """Per-UE building blocks of the closed forms, shaped ``(K, N)``."""

    def __init__(self, scn: Scenario, traj: Trajectory, bw: BandwidthPlan):
        self.scn = scn
        ind = compute_indicators(scn, traj, bw)
        self.ind = ind
        d = scn.subslot_len
        m_ue, m_relay, m_down = slot_masks(scn.num_slots)
        self.w_ue = np.where(np.isfinite(ind.phi_ue), d * bw.b_off_ue, 0.0)
        self.w_off = np.where(np.isfinite(ind.phi_uav_off), d * bw.b_off_uav, 0.0)
        self.w_down = np.where(np.isfinite(ind.phi_uav_down), d * bw.b_down_uav, 0.0)
        # 2**-phi: the threshold a multiplier must exceed before a link opens
        with np.errstate(over="ignore"):
            self.thr_ue = np.exp2(-ind.phi_ue)
            self.thr_off = np.exp2(-ind.phi_uav_off)
            self.thr_down = np.exp2(-ind.phi_uav_down)
        c = scn.cycles_per_bit
        self.comp = np.where(m_relay[None, :], (d / c / np.sqrt(3.0 * c * scn.weight_uav * scn.cap_uav))[:, None], 0.0)
        self.local_coef = scn.horizon / c / np.sqrt(3.0 * c * scn.weight_ue * scn.cap_ue)
        self.beta_max = 3.0 * c * scn.weight_ue * scn.cap_ue * (scn.task_bits * c / scn.horizon) ** 2
        self.can_offload = (self.w_ue.sum(axis=1) > 0) & (
            (self.w_off.sum(axis=1) > 0) | (self.comp.sum(axis=1) > 0)) & (self.w_down.sum(axis=1) > 0)
        self.fix_local = np.zeros(scn.num_ues, dtype=bool)

    # -- bit counts as functions of the scalar per-UE dual combinations ----
    @staticmethod
    def _rate(width, thr, arg):
        """``width * [log2(arg / thr)]^+`` and its derivative in ``arg``."""
        pos = (width > 0) & (arg > thr)
        safe = np.where(pos, arg, 1.0)
        val = np.where(pos, width * np.log2(safe / np.where(pos, thr, 1.0)), 0.0)
        der = np.where(pos, width / (LN2 * safe), 0.0)
        return val, der

    def recv(self, x, lam_hat):
        v, d = self._rate(self.w_ue, self.thr_ue, lam_hat + x[:, None])
        return v.sum(axis=1), d.sum(axis=1)

    def down(self, r, mu_tilde):
        v, d = self._rate(self.w_down, self.thr_down, r[:, None] - mu_tilde)
        return v.sum(axis=1), d.sum(axis=1)

    def proc_terms(self, g):
        gp = np.maximum(g, 0.0)
        comp = self.comp * np.sqrt(gp)
        fwd, dfwd = self._rate(self.w_off, self.thr_off, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            dcomp = np.where(gp > 0, 0.5 * self.comp / np.sqrt(np.where(gp > 0, gp, 1.0)), 0.0)
        return comp, fwd, dcomp + dfwd

    def proc(self, y, mu_hat, lam_tilde):
        o = self.scn.output_ratio[:, None]
        comp, fwd, der = self.proc_terms(y[:, None] + o * mu_hat - lam_tilde)
        return (comp + fwd).sum(axis=1), der.sum(axis=1)

    def local(self, beta):
        return self.local_coef * np.sqrt(np.maximum(beta, 0.0))


def closed_form_schedule(scn: Scenario, traj: Trajectory, bw: BandwidthPlan, duals: DualState,
                         terms: Optional[_Terms] = None) -> Schedule:
    """Minimiser of the partial Lagrangian for the given multipliers."""
    t = terms or _Terms(scn, traj, bw)
    c = scn.cycles_per_bit[:, None]
    o = scn.output_ratio[:, None]
    lam_hat, lam_tilde = duals.lam_hat, duals.lam_tilde
    mu_hat, mu_tilde = duals.mu_hat, duals.mu_tilde
    beta = duals.beta[:, None]

    z = Schedule.zeros(scn)
    z.f_ue[:] = np.sqrt(np.maximum(beta, 0.0) / (3.0 * c * scn.weight_ue[:, None] * scn.cap_ue[:, None]))
    z.l_off_ue[:] = t._rate(t.w_ue, t.thr_ue, lam_hat + beta - duals.eta[:, None])[0]
    g = duals.eta[:, None] - o * duals.rho[:, None] + o * mu_hat - lam_tilde
    comp, fwd, _ = t.proc_terms(g)
    z.f_uav[:] = comp * c / scn.subslot_len
    z.l_off_uav[:] = fwd
    z.l_down_uav[:] = t._rate(t.w_down, t.thr_down, duals.rho[:, None] - mu_tilde)[0]
    if t.fix_local.any():
        z.f_ue[t.fix_local] = 0.0
    return z


def subgradients(scn: Scenario, z: Schedule) -> tuple[np.ndarray, np.ndarray]:
    """Constraint slacks that drive the causality multipliers.

    Returns ``(d_lam, d_mu)`` of shape ``(K, N)``; entry ``[k, n-1]`` is the
    slack of the slot-``n`` constraint (received minus processed for
    ``d_lam``, produced output minus downloaded for ``d_mu``) and zero
    outside the constraint's slot range.
    """
    n = scn.num_slots
    proc = scn.subslot_len * z.f_uav / scn.cycles_per_bit[:, None] + z.l_off_uav
    cum_recv = np.cumsum(z.l_off_ue, axis=1)
    cum_proc = np.cumsum(proc, axis=1)
    cum_down = np.cumsum(z.l_down_uav, axis=1)
    d_lam = np.zeros_like(cum_recv)
    d_mu = np.zeros_like(cum_recv)
    # slot s (1-based) sits at index s-1; received bits count up to slot s-1
    d_lam[:, 1:n - 1] = cum_recv[:, 0:n - 2] - cum_proc[:, 1:n - 1]
    d_mu[:, 2:n] = scn.output_ratio[:, None] * cum_proc[:, 1:n - 1] - cum_down[:, 2:n]
    return d_lam, d_mu


def _bracket_recv(t: _Terms, lam_hat, target):
    """Bracket for ``x = beta - eta`` that offloads ``target`` bits.

    Below the smallest opening threshold nothing is offloaded.  Above
    ``2**q - min(lam_hat)``, with ``q`` the bandwidth-weighted shortfall of
    the priorities, every link carries at least its share of ``target``.
    """
    m = t.w_ue > 0
    wsum = t.w_ue.sum(axis=1)
    phisum = np.where(m, t.w_ue * np.where(m, t.ind.phi_ue, 0.0), 0.0).sum(axis=1)
    q = (target - phisum) / np.where(wsum > 0, wsum, 1.0)
    lo = np.where(m, t.thr_ue - lam_hat, np.inf).min(axis=1)
    lh_min = np.where(m, lam_hat, np.inf).min(axis=1)
    with np.errstate(over="ignore", invalid="ignore"):  # links without band give inf - inf
        hi = np.exp2(q) - lh_min
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, lo)
    return lo, np.maximum(hi, lo)


def _bracket_down(t: _Terms, mu_tilde, target):
    """Bracket for ``rho`` that downloads ``target`` bits."""
    m = t.w_down > 0
    wsum = t.w_down.sum(axis=1)
    phisum = np.where(m, t.w_down * np.where(m, t.ind.phi_uav_down, 0.0), 0.0).sum(axis=1)
    q = (target - phisum) / np.where(wsum > 0, wsum, 1.0)
    lo = np.where(m, t.thr_down + mu_tilde, np.inf).min(axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        hi = np.where(m, mu_tilde, -np.inf).max(axis=1) + np.exp2(q)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    hi = np.where(np.isfinite(hi), hi, lo)
    return lo, np.maximum(hi, lo)


def _invert(fun, target, lo, hi, tol):
    """Solve ``fun(x) = target`` for non-decreasing ``fun`` on a bracket.

    The analytic upper ends are valid bounds; the widening loop is a guard
    against round-off at the top of the bracket.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(200):
        short = fun(hi)[0] < target - tol
        if not short.any():
            break
        hi = np.where(short, hi + 2.0 * np.maximum(hi - lo, np.abs(hi) + 1e-30), hi)
    return solve_increasing(fun, target, lo, hi, ftol=tol)


def _proc_inverse(t: _Terms, target, mu_hat, lam_tilde, tol):
    o = t.scn.output_ratio[:, None]
    m = (t.w_off > 0) | (t.comp > 0)
    shift = o * mu_hat - lam_tilde
    lo = np.where(m, -shift, np.inf).min(axis=1)
    lo = np.where(np.isfinite(lo), lo, 0.0)
    return _invert(lambda y: t.proc(y, mu_hat, lam_tilde), target, lo, lo + 1e-12, tol)


@dataclass
class EqualitySolve:
    eta: np.ndarray
    rho: np.ndarray
    beta: np.ndarray
    residual: np.ndarray  # processed minus offloaded bits at the returned triple
    corner: np.ndarray  # "interior", "all-local", "all-offload" or "no-offload"


def solve_equality_duals(scn: Scenario, traj: Trajectory, bw: BandwidthPlan, duals: DualState,
                         terms: Optional[_Terms] = None, rel_tol: float = 1e-10,
                         bit_tol: float = 1e-4, allow_local: bool = True) -> EqualitySolve:
    """Multipliers of the three per-UE balance equalities for fixed ``lam``, ``mu``.

    The outer search runs over ``beta`` in ``[0, beta_max]``, carried out in
    the ``sqrt(beta)`` coordinate (proportional to the local bits).  For a
    trial ``beta`` the offload balance gives ``eta`` and the download
    balance gives ``rho``; the relay balance residual is non-decreasing in
    ``beta`` and steers the outer search.

    When even ``beta = 0`` over-processes, local computing is switched off
    and ``beta`` is taken negative so that the relay balance holds exactly.
    With ``allow_local=False`` this is the only branch used.
    """
    t = terms or _Terms(scn, traj, bw)
    k = scn.num_ues
    big_i = scn.task_bits
    o = scn.output_ratio
    tol = np.minimum(rel_tol * big_i, bit_tol)
    lam_hat, lam_tilde = duals.lam_hat, duals.lam_tilde
    mu_hat, mu_tilde = duals.mu_hat, duals.mu_tilde

    def offload_side(s):
        lo, hi = _bracket_recv(t, lam_hat, s)
        x = _invert(lambda xx: t.recv(xx, lam_hat), s, lo, hi, tol)
        lo, hi = _bracket_down(t, mu_tilde, o * s)
        rho = _invert(lambda rr: t.down(rr, mu_tilde), o * s, lo, hi, tol)
        return x, rho

    def residual(beta):
        s = np.maximum(big_i - t.local(beta), 0.0)
        x, rho = offload_side(s)
        eta = beta - x
        return eta, rho, t.proc(eta - o * rho, mu_hat, lam_tilde)[0] - s

    corner = np.full(k, "interior", dtype=object)
    no_local = t.fix_local | (not allow_local)
    if allow_local:
        eta, rho, r0 = residual(np.zeros(k))
        neg = (r0 > 0) | no_local
    else:
        eta, rho = np.zeros(k), np.zeros(k)
        neg = np.ones(k, dtype=bool)

    # regula falsi (Illinois variant) on sqrt(beta), bisection safeguarded
    s_max = np.sqrt(t.beta_max)
    lo, hi = np.zeros(k), s_max.copy()
    r_lo = r0 if allow_local else np.zeros(k)
    r_hi = np.full(k, np.inf)
    sq = np.where(neg, 0.0, hi)
    side = np.zeros(k)
    todo = ~neg
    for _ in range(200):
        if not todo.any():
            break
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            sec = (lo * r_hi - hi * r_lo) / (r_hi - r_lo)
        width = hi - lo
        ok = np.isfinite(sec) & (sec > lo + 1e-4 * width) & (sec < hi - 1e-4 * width)
        trial = np.where(ok, sec, 0.5 * (lo + hi))
        sq = np.where(todo, trial, sq)
        e_t, r_t, res = residual(sq * sq)
        eta = np.where(todo, e_t, eta)
        rho = np.where(todo, r_t, rho)
        up = res < 0
        lo = np.where(todo & up, sq, lo)
        hi = np.where(todo & ~up, sq, hi)
        r_lo = np.where(todo & up, res, r_lo)
        r_hi = np.where(todo & ~up, res, r_hi)
        # Illinois: halve the stale end's residual when the same side moves twice
        r_hi = np.where(todo & up & (side > 0), 0.5 * r_hi, r_hi)
        r_lo = np.where(todo & ~up & (side < 0), 0.5 * r_lo, r_lo)
        side = np.where(todo, np.where(up, 1.0, -1.0), side)
        todo &= ~((np.abs(res) <= tol) | (hi - lo <= 1e-14 * s_max))
    beta = sq * sq
    resid = np.zeros(k)
    if (~neg).any():
        e_t, r_t, res = residual(beta)
        eta, rho, resid = (np.where(neg, 0.0, e_t), np.where(neg, 0.0, r_t), res)
        corner[~neg & (sq >= s_max * (1 - 1e-9))] = "all-local"

    if neg.any():
        x, rho_n = offload_side(np.full(k, 1.0) * big_i)
        y = _proc_inverse(t, big_i, mu_hat, lam_tilde, tol)
        eta_n = y + o * rho_n
        eta = np.where(neg, eta_n, eta)
        rho = np.where(neg, rho_n, rho)
        beta = np.where(neg, eta_n + x, beta)
        resid = np.where(neg, t.proc(y, mu_hat, lam_tilde)[0] - big_i, resid)
        corner[neg] = "all-offload"
    corner[~t.can_offload] = "no-offload"
    beta = np.where(t.can_offload, beta, t.beta_max)
    return EqualitySolve(eta, rho, beta, resid, corner)


def _carry_forward(amount: np.ndarray, cap: np.ndarray, can_take: np.ndarray) -> np.ndarray:
    """Push bits that exceed a cumulative cap into later slots.

    ``amount`` and ``cap`` are 1-D; ``cap[n]`` bounds ``cumsum(amount)[n]``.
    Excess is moved to the next slot allowed by ``can_take``.  Whatever
    cannot be placed stays in the last allowed slot.
    """
    out = amount.copy()
    carry = 0.0
    done = 0.0
    last = np.nonzero(can_take)[0]
    last = int(last[-1]) if last.size else len(out) - 1
    for n in range(len(out)):
        if not can_take[n] and n != last:
            carry += out[n]
            out[n] = 0.0
            continue
        want = out[n] + carry
        room = max(cap[n] - done, 0.0)
        put = want if n == last else min(want, room)
        out[n] = put
        carry = want - put
        done += put
    return out


def restore_feasibility(scn: Scenario, z: Schedule, bw: BandwidthPlan,
                        allow_local: bool = True) -> Schedule:
    """Nearest-by-construction feasible schedule to a dual iterate.

    Offloaded bits are capped at the task size and local computing takes
    the rest at constant frequency.  With ``allow_local=False`` the
    offloaded bits are instead scaled up to the whole task.  UAV processing and downloading are
    rescaled to match the balances exactly, then bits that would break
    causality are carried into the next slot that can take them.
    """
    out = z.copy()
    c = scn.cycles_per_bit
    d = scn.subslot_len
    big_i = scn.task_bits
    o = scn.output_ratio
    _, m_relay, m_down = slot_masks(scn.num_slots)
    for k in range(scn.num_ues):
        recv = out.l_off_ue[k]
        tot = recv.sum()
        if tot > big_i[k] or (not allow_local and tot > 0):
            recv *= big_i[k] / tot
            tot = big_i[k]
        elif not allow_local:
            open_ = np.flatnonzero(bw.b_off_ue[k] > 0)
            recv[open_[0] if open_.size else 0] = tot = big_i[k]
        out.f_ue[k, :] = max(big_i[k] - tot, 0.0) * c[k] / scn.horizon

        comp = d * out.f_uav[k] / c[k]
        fwd = out.l_off_uav[k]
        proc = comp + fwd
        ptot = proc.sum()
        if ptot > 0:
            scale = tot / ptot
            comp, fwd, proc = comp * scale, fwd * scale, proc * scale
        elif tot > 0:
            # nothing processed yet: compute everything in the last relay slot
            comp = np.zeros_like(comp)
            comp[scn.num_slots - 2] = tot
            proc = comp + fwd
        cap = np.concatenate(([0.0], np.cumsum(recv)[:-1]))
        new_proc = _carry_forward(proc, cap, m_relay)
        share = np.divide(comp, proc, out=np.ones_like(proc), where=proc > 0)
        # a slot without forwarding bandwidth computes everything it receives
        share = np.where(bw.b_off_uav[k] > 0, share, 1.0)
        comp, fwd = new_proc * share, new_proc * (1.0 - share)
        out.f_uav[k] = comp * c[k] / d
        out.l_off_uav[k] = fwd

        down = out.l_down_uav[k]
        dtot = down.sum()
        want = o[k] * new_proc.sum()
        if dtot > 0:
            down = down * (want / dtot)
        elif want > 0:
            down = np.zeros_like(down)
            down[-1] = want
        cap = np.concatenate(([0.0], o[k] * np.cumsum(new_proc)[:-1]))
        out.l_down_uav[k] = _carry_forward(down, cap, m_down & (bw.b_down_uav[k] > 0))
    return out


@dataclass
class P11Result:
    """Outcome of :func:`solve_p11`.

    ``history`` holds the best feasible objective after every dual
    evaluation and ``dual_history`` the matching dual lower bounds, so
    ``history[-1] - dual_history[-1]`` certifies the optimality gap.
    """

    schedule: Schedule
    duals: DualState
    objective: float
    lower_bound: float
    history: list = field(default_factory=list)
    dual_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    corners: Optional[np.ndarray] = None

    @property
    def gap(self) -> float:
        return self.objective - self.lower_bound


class _DualOracle:
    """Evaluates the partial dual function and tracks the best primal repair."""

    def __init__(self, scn, traj, bw, terms, allow_local, tol, max_eval):
        self.scn, self.traj, self.bw, self.terms = scn, traj, bw, terms
        self.allow_local = allow_local
        self.tol = tol
        self.max_eval = max_eval
        _, m_relay, m_down = slot_masks(scn.num_slots)
        self.m_lam = np.broadcast_to(m_relay, (scn.num_ues, scn.num_slots)).copy()
        self.m_mu = np.broadcast_to(m_down, (scn.num_ues, scn.num_slots)).copy()
        self.best = None
        self.best_obj = math.inf
        self.best_lb = -math.inf
        self.best_duals = None
        self.corners = None
        self.history: list[float] = []
        self.dual_history: list[float] = []

    def __call__(self, duals: DualState):
        """Dual value and slack subgradients at ``duals`` (updated in place)."""
        scn = self.scn
        eq = solve_equality_duals(scn, self.traj, self.bw, duals, self.terms,
                                  allow_local=self.allow_local)
        duals.eta, duals.rho, duals.beta = eq.eta, eq.rho, eq.beta
        z = closed_form_schedule(scn, self.traj, self.bw, duals, self.terms)
        d_lam, d_mu = subgradients(scn, z)
        d_lam *= self.m_lam
        d_mu *= self.m_mu
        lb = (scheduling_objective(scn, z, self.bw, self.traj)
              - float(np.sum(duals.lam * d_lam)) - float(np.sum(duals.mu * d_mu)))
        zr = restore_feasibility(scn, z, self.bw, self.allow_local)
        obj = scheduling_objective(scn, zr, self.bw, self.traj)
        if obj < self.best_obj or self.best is None:
            self.best, self.best_obj, self.corners = zr, obj, eq.corner
        if lb > self.best_lb:
            self.best_lb, self.best_duals = lb, duals.copy()
        self.history.append(self.best_obj)
        self.dual_history.append(self.best_lb)
        return lb, d_lam, d_mu, eq

    @property
    def done(self) -> bool:
        return self.best_obj - self.best_lb <= self.tol * abs(self.best_obj)

    @property
    def exhausted(self) -> bool:
        return len(self.history) >= self.max_eval


class _Stop(Exception):
    pass


def _run_lbfgs(oracle: _DualOracle, duals: DualState):
    from scipy.optimize import minimize

    lb0, _, _, eq = oracle(duals)
    if oracle.done or oracle.exhausted:
        return
    m_lam, m_mu = oracle.m_lam, oracle.m_mu
    nl = int(m_lam.sum())
    # multipliers are measured in units of the equality multipliers
    mag = np.maximum.reduce([np.abs(eq.eta), np.abs(eq.rho), np.abs(eq.beta)])
    mag = np.where(mag > 0, mag, 1.0)[:, None] * np.ones_like(duals.lam)
    s_lam, s_mu = mag[m_lam], mag[m_mu]
    fscale = max(abs(lb0), 1e-300)

    def fun(x):
        duals.lam = np.zeros_like(duals.lam)
        duals.mu = np.zeros_like(duals.mu)
        duals.lam[m_lam] = x[:nl] * s_lam
        duals.mu[m_mu] = x[nl:] * s_mu
        lb, d_lam, d_mu, _ = oracle(duals)
        if oracle.done or oracle.exhausted:
            raise _Stop
        grad = np.concatenate([d_lam[m_lam] * s_lam, d_mu[m_mu] * s_mu])
        return -lb / fscale, grad / fscale

    x0 = np.concatenate([duals.lam[m_lam] / s_lam, duals.mu[m_mu] / s_mu])
    try:
        minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, None)] * x0.size,
                 options=dict(maxfun=oracle.max_eval, maxiter=oracle.max_eval, ftol=0.0, gtol=0.0))
    except _Stop:
        pass


def _run_subgradient(oracle: _DualOracle, duals: DualState, step: StepSchedule):
    scale = None
    for j in range(1, oracle.max_eval + 1):
        _, d_lam, d_mu, eq = oracle(duals)
        if oracle.done:
            return
        if scale is None:
            mag = np.maximum.reduce([np.abs(eq.eta), np.abs(eq.rho), np.abs(eq.beta)])
            scale = (mag / oracle.scn.task_bits)[:, None]
        a = step(j)
        duals.lam = np.maximum(duals.lam - a * scale * d_lam, 0.0) * oracle.m_lam
        duals.mu = np.maximum(duals.mu - a * scale * d_mu, 0.0) * oracle.m_mu


def solve_p11(scn: Scenario, traj: Trajectory, bw: BandwidthPlan, *,
              warm: Optional[DualState] = None, method: str = "lbfgs",
              step: Optional[StepSchedule] = None, max_iter: int = 500, tol: float = 1e-4,
              allow_local: bool = True) -> P11Result:
    """Scheduling for a fixed trajectory and bandwidth plan, solved in the dual.

    The causality multipliers ``(lam, mu)`` are the outer dual variables;
    every evaluation solves the equality multipliers, forms the closed-form
    schedule and repairs it into a feasible one.

    Parameters
    ----------
    warm
        Multipliers from a previous call, reused as the starting point.
    method
        ``"lbfgs"`` runs bound-constrained quasi-Newton ascent on the dual
        (its gradient is the vector of causality slacks).  ``"subgradient"``
        runs projected steps ``[lam - a_j * slack]^+`` with ``step``; the
        step base is multiplied by the typical multiplier over the task size.
    max_iter
        Cap on dual evaluations.
    tol
        Relative duality gap at which to stop.
    allow_local
        ``False`` forces every bit to be offloaded.
    """
    if method not in ("lbfgs", "subgradient"):
        raise ValueError(f"unknown method {method!r}")
    terms = _Terms(scn, traj, bw)
    if not allow_local:
        terms.fix_local[:] = True
    oracle = _DualOracle(scn, traj, bw, terms, allow_local, tol, max_iter)
    duals = warm.copy() if warm is not None else DualState.zeros(scn)
    duals.lam = duals.lam * oracle.m_lam
    duals.mu = duals.mu * oracle.m_mu
    if method == "lbfgs":
        _run_lbfgs(oracle, duals)
    else:
        _run_subgradient(oracle, duals, step or StepSchedule())
    log.debug("scheduling: %d evaluations, objective %.6g J, gap %.3g J", len(oracle.history),
              oracle.best_obj, oracle.best_obj - oracle.best_lb)
    return P11Result(oracle.best, oracle.best_duals, oracle.best_obj, oracle.best_lb,
                     oracle.history, oracle.dual_history, len(oracle.history), oracle.done,
                     oracle.corners)

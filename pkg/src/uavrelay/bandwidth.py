"""Bandwidth allocation for a fixed trajectory and schedule.

Every (UE, slot) pair splits the band between up to three streams: the UE
uplink to the UAV, the UAV relay link to the AP and the UAV downlink back
to the UE.  Transmission energy is convex and decreasing in bandwidth, so
the split that minimises the weighted energy equalises the marginal
savings.  For a common multiplier ``phi`` each stream's share has a closed
form in the Lambert W function; ``phi`` is found by bisection so that the
shares fill the band.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .model import BandwidthPlan, Scenario, Schedule, Trajectory, trajectory_gains
from .numerics import BisectionSpec, bisect, lambert_w0_exp

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
HALF_LN2 = 0.5 * LN2
STREAMS = ("b_off_ue", "b_off_uav", "b_down_uav")
ACTIVE_BITS = 0.0
"""Streams carrying more than this many bits are active and need bandwidth."""


@dataclass
class BandwidthDuals:
    """Per-(UE, slot) multiplier of the band constraint.

    ``phi`` is the normalised multiplier (``nu / (delta**2 * N0 * ln 2)``);
    it is ``nan`` where fewer than two streams are active.
    """

    phi: np.ndarray
    delta: float
    noise_power: float

    @property
    def nu(self) -> np.ndarray:
        return self.phi * self.delta ** 2 * self.noise_power * LN2


def _stacked(scn: Scenario, traj: Trajectory, z: Schedule):
    """Bits, gains and weights of the three streams, each ``(3, K, N)``."""
    h_ap, h_ue = trajectory_gains(scn, traj)
    k, n = scn.num_ues, scn.num_slots
    bits = np.stack([z.l_off_ue, z.l_off_uav, z.l_down_uav])
    gains = np.stack([h_ue, np.broadcast_to(h_ap, (k, n)), h_ue])
    weights = np.stack([np.broadcast_to(scn.weight_ue[:, None], (k, n)),
                        np.full((k, n), scn.weight_uav), np.full((k, n), scn.weight_uav)])
    return bits, gains, weights


def stream_bandwidth(log_phi, bits, gain, weight, delta):
    """Closed-form bandwidth of one stream at multiplier ``exp(log_phi)``.

    Zero bits get zero bandwidth.  Decreasing in ``phi``.
    """
    bits = np.asarray(bits, dtype=float)
    pos = bits > 0
    safe = np.where(pos, bits, 1.0)
    a = math.log(HALF_LN2) + 0.5 * (log_phi + np.log(gain) + np.log(safe) - np.log(weight))
    return np.where(pos, HALF_LN2 * safe / (delta * lambert_w0_exp(a)), 0.0)


def log_phi_at(x, bits, gain, weight, delta):
    """``log phi`` at which a stream's closed-form share equals ``x`` Hz."""
    return (np.log(weight * bits / (delta ** 2 * x ** 2 * gain)) + LN2 * bits / (delta * x))


def closed_form_bandwidth(scn: Scenario, traj: Trajectory, z: Schedule, phi) -> BandwidthPlan:
    """Allocation of every stream at the given multiplier(s) ``phi > 0``."""
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (scn.num_ues, scn.num_slots))
    bits, gains, weights = _stacked(scn, traj, z)
    if np.any((bits > 0) & ~(phi[None] > 0)):
        raise ValueError("phi must be positive wherever a stream carries bits")
    with np.errstate(divide="ignore"):
        lp = np.log(np.where(phi > 0, phi, 1.0))
    out = stream_bandwidth(lp[None], bits, gains, weights, scn.subslot_len)
    return BandwidthPlan(*out)


def phi_bracket(scn: Scenario, traj: Trajectory, z: Schedule):
    """Bracket on ``log phi`` for every (UE, slot) with two or more active streams.

    If ``m`` streams are active, at the solution one of them holds at
    least ``B/m`` and another at most ``B/m``; as each share falls with
    ``phi`` the solution lies between the smallest and the largest
    ``phi`` at which a single stream would take exactly ``B/m``.
    """
    bits, gains, weights = _stacked(scn, traj, z)
    active = bits > ACTIVE_BITS
    count = active.sum(axis=0)
    x = scn.bandwidth_total / np.maximum(count, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = log_phi_at(x[None], np.where(active, bits, 1.0), gains, weights, scn.subslot_len)
    lo = np.where(active, lp, np.inf).min(axis=0)
    hi = np.where(active, lp, -np.inf).max(axis=0)
    multi = count >= 2
    return np.where(multi, lo, 0.0), np.where(multi, hi, 0.0), count


def solve_phi(scn: Scenario, traj: Trajectory, z: Schedule, hz_tol: float = 1e-4):
    """Band multiplier ``log phi`` of every multi-stream (UE, slot) pair.

    Returns ``(log_phi, count)``; entries with fewer than two active
    streams are ``nan``.
    """
    bits, gains, weights = _stacked(scn, traj, z)
    d = scn.subslot_len
    lo, hi, count = phi_bracket(scn, traj, z)
    multi = count >= 2
    if not multi.any():
        return np.full(count.shape, np.nan), count

    def total(lp):
        return stream_bandwidth(lp[None], bits, gains, weights, d).sum(axis=0)

    # the bracket is provably valid; widen by a decade per miss in case of round-off
    big = scn.bandwidth_total
    for _ in range(20):
        miss_lo = multi & (total(lo) < big)
        miss_hi = multi & (total(hi) > big)
        if not (miss_lo.any() or miss_hi.any()):
            break
        log.info("widening phi bracket at %d pair(s)", int(miss_lo.sum() + miss_hi.sum()))
        lo = np.where(miss_lo, lo - math.log(10.0), lo)
        hi = np.where(miss_hi, hi + math.log(10.0), hi)
    spec = BisectionSpec(lo, hi, tol=1e-15 * max(1.0, float(np.max(np.abs(hi)))),
                         max_iter=200, monotone_direction="decreasing")
    res = bisect(spec, total, target=big, ftol=hz_tol)
    return np.where(multi, res.root, np.nan), count


def equal_split(scn: Scenario, z: Schedule | None = None) -> BandwidthPlan:
    """Equal share of the band for every stream.

    With ``z`` the band is split among the streams that carry bits; without
    it, among the streams the slot structure allows at all.
    """
    k, n = scn.num_ues, scn.num_slots
    idx = np.arange(n)
    if z is None:
        masks = np.stack([np.broadcast_to(idx <= n - 3, (k, n)),
                          np.broadcast_to((idx >= 1) & (idx <= n - 2), (k, n)),
                          np.broadcast_to(idx >= 2, (k, n))])
    else:
        masks = np.stack([z.l_off_ue, z.l_off_uav, z.l_down_uav]) > ACTIVE_BITS
    count = masks.sum(axis=0)
    share = np.divide(scn.bandwidth_total, count, out=np.zeros((k, n)), where=count > 0)
    plan = BandwidthPlan(*(np.where(m, share, 0.0) for m in masks))
    if z is not None:
        _idle_ends(scn, plan, count)
    return plan


def _idle_ends(scn: Scenario, plan: BandwidthPlan, count: np.ndarray):
    # an idle first or last slot still holds the band on its only possible stream
    plan.b_off_ue[:, 0] = np.where(count[:, 0] == 0, scn.bandwidth_total, plan.b_off_ue[:, 0])
    plan.b_down_uav[:, -1] = np.where(count[:, -1] == 0, scn.bandwidth_total, plan.b_down_uav[:, -1])


def solve_p12(scn: Scenario, traj: Trajectory, z: Schedule) -> tuple[BandwidthPlan, BandwidthDuals]:
    """Energy-minimising band split for a fixed trajectory and schedule.

    Idle slots get no bandwidth (except the first uplink and the last
    downlink slot, which keep the whole band), single-stream slots give the
    whole band to that stream and multi-stream slots use the closed forms
    at the bisected multiplier, rescaled so the shares sum to the band
    exactly.
    """
    bits, gains, weights = _stacked(scn, traj, z)
    big = scn.bandwidth_total
    log_phi, count = solve_phi(scn, traj, z)
    multi = count >= 2
    shares = stream_bandwidth(np.where(multi, log_phi, 0.0)[None], bits, gains, weights,
                              scn.subslot_len)
    shares = np.where(multi[None], shares, 0.0)
    tot = shares.sum(axis=0)
    shares *= np.divide(big, tot, out=np.ones_like(tot), where=multi & (tot > 0))[None]
    single = (count == 1)[None] & (bits > ACTIVE_BITS)
    shares = np.where(single, big, shares)
    plan = BandwidthPlan(*shares)
    _idle_ends(scn, plan, count)
    with np.errstate(over="ignore"):
        phi = np.where(multi, np.exp(np.where(multi, log_phi, 0.0)), np.nan)
    return plan, BandwidthDuals(phi, scn.subslot_len, scn.noise_power)


def stationarity_residual(scn: Scenario, traj: Trajectory, z: Schedule, plan: BandwidthPlan,
                          duals: BandwidthDuals) -> np.ndarray:
    """Relative gap between each active stream's marginal saving and ``phi``.

    For an optimal split every active stream of a multi-stream slot has
    ``w l 2**(l / (delta B)) / (h delta**2 B**2) = phi``; the returned
    ``(3, K, N)`` array is zero elsewhere.
    """
    bits, gains, weights = _stacked(scn, traj, z)
    d = scn.subslot_len
    b = np.stack([plan.b_off_ue, plan.b_off_uav, plan.b_down_uav])
    use = (bits > ACTIVE_BITS) & np.isfinite(duals.phi)[None] & (b > 0)
    bs = np.where(use, b, 1.0)
    lp = log_phi_at(bs, np.where(use, bits, 1.0), gains, weights, d)
    with np.errstate(invalid="ignore"):
        res = np.expm1(lp - np.log(np.where(use, duals.phi[None], 1.0)))
    return np.where(use, np.abs(res), 0.0)

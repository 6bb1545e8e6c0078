"""Lambert W, bracketed root finding and projected subgradient steps."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

_INV_E = math.exp(-1.0)


def lambert_w0(x):
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Works elementwise on arrays.  Starts from a branch-point series, a
    ``log1p`` guess or the asymptotic ``log x - log log x`` expansion and
    polishes with at most 20 Halley steps.
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    x = np.atleast_1d(arr)
    if np.any(np.isnan(x)):
        raise ValueError("lambert_w0 of NaN")
    if np.any(x < -_INV_E - 1e-15):
        raise ValueError("lambert_w0 is real only for x >= -1/e")
    x = np.maximum(x, -_INV_E)

    w = np.empty_like(x)
    near_branch = x < -0.25
    mid = (~near_branch) & (x <= 3.0)
    big = x > 3.0
    if near_branch.any():
        p = np.sqrt(np.maximum(2.0 * (math.e * x[near_branch] + 1.0), 0.0))
        w[near_branch] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    if mid.any():
        w[mid] = np.log1p(x[mid]) * (1.0 - np.log1p(np.log1p(x[mid])) / (2.0 + np.log1p(x[mid])))
    if big.any():
        l1 = np.log(x[big])
        l2 = np.log(l1)
        w[big] = l1 - l2 + l2 / l1

    done = (x == 0.0) | (x == -_INV_E)
    w[x == 0.0] = 0.0
    w[x == -_INV_E] = -1.0
    for _ in range(20):
        act = ~done
        if not act.any():
            break
        wa, xa = w[act], x[act]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(denom != 0.0, f / denom, 0.0)
        new = wa - step
        w[act] = new
        done[act] = np.abs(step) <= 4e-16 * (1.0 + np.abs(new))
    return float(w[0]) if scalar else w.reshape(arr.shape)


def lambert_w0_exp(a):
    """``W0(exp(a))`` without forming ``exp(a)``, so huge arguments stay finite.

    Solves ``w + log(w) = a`` by Newton's method once ``a`` is large enough
    for the exponential to overflow.
    """
    a = np.asarray(a, dtype=float)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)
    small = a <= 500.0
    if small.any():
        out[small] = lambert_w0(np.exp(a[small]))
    if (~small).any():
        b = a[~small]
        w = b - np.log(b)
        for _ in range(50):
            step = (w + np.log(w) - b) * w / (w + 1.0)
            w = w - step
            if np.all(np.abs(step) <= 4e-16 * w):
                break
        out[~small] = w
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class BisectionSpec:
    lo: float
    hi: float
    tol: float
    max_iter: int = 200
    monotone_direction: Literal["increasing", "decreasing"] = "increasing"

    def __post_init__(self):
        if not np.all(np.asarray(self.lo) <= np.asarray(self.hi)):
            raise ValueError("bisection needs lo <= hi")
        if not self.tol > 0:
            raise ValueError("bisection tolerance must be positive")


@dataclass
class BisectionResult:
    root: np.ndarray | float
    iterations: int
    converged: bool
    bracket_miss: np.ndarray | bool  # target outside [g(lo), g(hi)]; root pinned at an end


def bisect(spec: BisectionSpec, g: Callable, target=0.0, ftol: float = 0.0) -> BisectionResult:
    """Solve ``g(x) = target`` for a monotone ``g`` by interval halving.

    ``lo``, ``hi`` and ``target`` may be arrays, in which case ``g`` must act
    elementwise and every coordinate is bisected in lockstep.  A target that
    is not bracketed is not an error: the nearer end point is returned and
    flagged in ``bracket_miss``.
    """
    lo = np.array(spec.lo, dtype=float)
    hi = np.array(spec.hi, dtype=float)
    target = np.asarray(target, dtype=float)
    sign = 1.0 if spec.monotone_direction == "increasing" else -1.0
    g_lo = sign * (np.asarray(g(lo), dtype=float) - target)
    g_hi = sign * (np.asarray(g(hi), dtype=float) - target)
    below = g_hi < 0  # target beyond hi
    above = g_lo > 0  # target before lo
    miss = below | above
    pinned = np.where(below, hi, lo)

    width = float(np.max(hi - lo)) if lo.size else 0.0
    max_iter = spec.max_iter
    if width > spec.tol:
        max_iter = min(max_iter, int(math.ceil(math.log2(width / spec.tol))))
    it = 0
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        gm = sign * (np.asarray(g(mid), dtype=float) - target)
        go_right = gm < 0
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
        if ftol > 0 and np.all(np.abs(gm) <= ftol):
            lo = hi = mid
            break
        if np.all(hi - lo <= spec.tol):
            break
    else:
        it = max_iter if max_iter > 0 else 0
    root = np.where(miss, pinned, 0.5 * (lo + hi))
    converged = bool(np.all(hi - lo <= spec.tol)) or (ftol > 0 and bool(np.all(lo == hi)))
    if root.ndim == 0:
        return BisectionResult(float(root), it, converged, bool(miss))
    return BisectionResult(root, it, converged, miss)


def solve_increasing(fun: Callable, target, lo, hi, ftol=0.0,
                     xtol_rel: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    """Vectorised safeguarded Newton for increasing ``fun`` on ``[lo, hi]``.

    ``fun(x)`` returns ``(value, derivative)`` elementwise.  The bracket is
    shrunk every iteration, and a Newton step that leaves it is replaced by
    the midpoint, so convergence is never slower than bisection.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    target = np.broadcast_to(np.asarray(target, dtype=float), lo.shape)
    ftol = np.broadcast_to(np.asarray(ftol, dtype=float), lo.shape)
    x = 0.5 * (lo + hi)
    done = np.zeros(lo.shape, dtype=bool)
    for _ in range(max_iter):
        val, der = fun(x)
        r = val - target
        done |= np.abs(r) <= ftol
        lo = np.where(r < 0, x, lo)
        hi = np.where(r > 0, x, hi)
        done |= (hi - lo) <= xtol_rel * np.maximum(np.abs(lo), np.abs(hi))
        if done.all():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - r / der
        ok = np.isfinite(newton) & (newton > lo) & (newton < hi)
        x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
    return x


@dataclass(frozen=True)
class StepSchedule:
    """Step sizes ``a / j**p`` (diminishing) or ``a`` (constant)."""

    kind: Literal["diminishing", "constant"] = "diminishing"
    a: float = 1.0
    exponent: float = 0.5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("step base must be positive")
        if self.kind == "diminishing" and not 0.5 <= self.exponent <= 1.0:
            raise ValueError("diminishing exponent must lie in [0.5, 1]")
        if self.kind not in ("diminishing", "constant"):
            raise ValueError(f"unknown step kind {self.kind!r}")

    def __call__(self, j: int) -> float:
        if j < 1:
            raise ValueError("iterations are counted from 1")
        if self.kind == "constant":
            return self.a
        return self.a / j ** self.exponent

    def scaled(self, factor: float) -> "StepSchedule":
        return StepSchedule(self.kind, self.a * factor, self.exponent)


def subgradient_step(value, grad, step: float):
    """Projected update ``[value - step * grad]^+``."""
    if not step > 0:
        raise ValueError("step must be positive")
    out = np.maximum(np.asarray(value, dtype=float) - step * np.asarray(grad, dtype=float), 0.0)
    return out if out.ndim else float(out)

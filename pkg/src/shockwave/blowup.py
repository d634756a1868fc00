"""
Critical times: closed forms, the large-deviation rate functional for signed
Burgers data, the two-type phase classifier and the Cramer lower bound for
general fluxes.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .dist_core import (
    as_ic,
    AuxiliaryDist,
    ExponentialIC,
    Nonlinearity,
    PreconditionError,
    eval_nonlinearity,
    lambert_w0,
    require_valid,
)
from .characteristics import detect_shock


class Method(str, enum.Enum):
    LAMBERT_FORMULA = "lambert_formula"
    FIRST_MOMENT = "first_moment"
    GENERAL_MOMENT = "general_moment"
    RATE_BISECTION = "rate_bisection"
    CRAMER_BOUND = "cramer_bound"
    SHOCK_DETECTION = "shock_detection"


class Guarantee(str, enum.Enum):
    EXACT = "exact"
    LOWER_BOUND = "lower_bound"
    UPPER_BOUND = "upper_bound"


@dataclass(frozen=True)
class BlowupResult:
    t_c: float
    method: Method
    guaranteed: Guarantee


@dataclass(frozen=True)
class SimplexPoint:
    rho: tuple[float, ...]


class PhaseRegion(str, enum.Enum):
    GLOBAL_1 = "global_1"
    GLOBAL_2 = "global_2"
    GLOBAL_3 = "global_3"
    BLOWUP_4 = "blowup_4"
    BLOWUP_5 = "blowup_5"
    UNCLASSIFIED = "unclassified"


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def tc_single(c: float) -> BlowupResult:
    """Validity time of E[(c e^{-x})^T] with T ~ Borel(t)."""
    c = abs(float(c))
    if c < 1.0:
        t = math.inf
    else:
        t = -lambert_w0(-1.0 / (c * math.e))
    return BlowupResult(t, Method.LAMBERT_FORMULA, Guarantee.EXACT)


def tc_prob_burgers(p) -> BlowupResult:
    p = as_ic(p)
    if not p.probabilistic:
        raise PreconditionError("exact shock time needs probabilistic data; use tc_nonprob")
    return BlowupResult(1.0 / p.first_moment(), Method.FIRST_MOMENT, Guarantee.EXACT)


def tc_prob_general(p, F: Nonlinearity) -> BlowupResult:
    p = as_ic(p)
    require_valid(F)
    if not p.probabilistic:
        raise PreconditionError("exact shock time needs probabilistic data")
    curv = eval_nonlinearity(F, 1.0, 2)
    if curv <= 0.0:
        warnings.warn("F''(1) = 0: linear transport, no gradient blow-up", RuntimeWarning)
        return BlowupResult(math.inf, Method.GENERAL_MOMENT, Guarantee.EXACT)
    return BlowupResult(1.0 / (p.first_moment() * curv), Method.GENERAL_MOMENT, Guarantee.EXACT)


# ---------------------------------------------------------------------------
# rate functional
# ---------------------------------------------------------------------------

def _support(p: ExponentialIC):
    pa = p.as_array()
    idx = np.nonzero(pa)[0]
    if idx.size == 0:
        raise PreconditionError("at least one p_k must be nonzero")
    return idx, (idx + 1).astype(float), np.log(np.abs(pa[idx]))


def _rate_objective(rho: np.ndarray, t: float, ks: np.ndarray, logw: np.ndarray) -> float:
    pos = rho > 0
    ent = np.sum(rho[pos] * (np.log(rho[pos]) - math.log(t) - logw[pos]))
    return float(ent + t * np.dot(ks, rho) - math.log(np.dot(ks, rho)) - 1.0)


class _Stationary:
    """Minimiser of the rate functional at fixed t.

    Stationarity forces rho_k proportional to |p_k| e^{k tau} with the tilt tau
    tied to t by t = 1/mu(tau) - tau, mu(tau) being the tilted mean of k.
    That relation is strictly decreasing in tau, so tau is a 1-D root.
    """

    def __init__(self, t: float, ks: np.ndarray, logw: np.ndarray):
        self.t = t
        kmin, kmax = ks.min(), ks.max()
        if kmin == kmax:
            tau = 1.0 / kmin - t
        else:
            lo = 1.0 / kmax - t - 1.0
            hi = max(1.0 - t, 0.0) + 1.0
            tau = brentq(lambda s: 1.0 / self._mu(s, ks, logw) - s - t, lo, hi,
                         xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        a = logw + ks * tau
        lz = logsumexp(a)
        self.rho = np.exp(a - lz)
        self.mu = float(np.dot(ks, self.rho))
        self.value = -math.log(t) - float(lz) - math.log(self.mu)

    @staticmethod
    def _mu(tau, ks, logw):
        a = logw + ks * tau
        w = np.exp(a - a.max())
        return float(np.dot(ks, w) / w.sum())

    @property
    def dvalue_dt(self) -> float:
        return self.mu - 1.0 / self.t


def _multistart(t: float, ks: np.ndarray, logw: np.ndarray, starts: int = 16,
                step_tol: float = 1e-12, max_iter: int = 20000):
    """Gradient descent with Armijo backtracking in softmax coordinates, several starts."""
    d = ks.size
    rng = np.random.default_rng(0x5EED)
    thetas = [logw.copy(), np.zeros(d)] + [rng.normal(scale=3.0, size=d) for _ in range(starts - 2)]
    best_val, best_rho = math.inf, None
    for theta in thetas[:starts]:
        theta = theta - theta.max()
        rho = np.exp(theta) / np.exp(theta).sum()
        val = _rate_objective(rho, t, ks, logw)
        step = 1.0
        for _ in range(max_iter):
            s = float(np.dot(ks, rho))
            with np.errstate(divide="ignore"):
                g = np.log(rho) - math.log(t) - logw + 1.0 + t * ks - ks / s
            g = np.where(rho > 0, g, 0.0)
            grad = rho * (g - np.dot(rho, g))
            gnorm2 = float(np.dot(grad, grad))
            if gnorm2 == 0.0:
                break
            step = min(step * 2.0, 1e6)
            while True:
                cand = theta - step * grad
                cand -= cand.max()
                e = np.exp(cand)
                rho_c = e / e.sum()
                val_c = _rate_objective(rho_c, t, ks, logw)
                if val_c <= val - 1e-4 * step * gnorm2 or step < 1e-300:
                    break
                step *= 0.5
            moved = step * math.sqrt(gnorm2)
            theta, rho, val = cand, rho_c, min(val, val_c)
            if moved < step_tol:
                break
        if val < best_val:
            best_val, best_rho = val, rho
    return best_val, best_rho


def rate_functional_E(t: float, p, method: str = "stationary") -> tuple[float, SimplexPoint]:
    """inf over rho of sum rho_k (log(rho_k / (t|p_k|)) + t k) - log(sum k rho_k) - 1.

    The infimum runs over distributions on {k : p_k != 0}. ``method`` is
    "stationary" (exact 1-D reduction) or "multistart" (16-start descent).
    """
    p = as_ic(p)
    if t <= 0:
        raise PreconditionError("t must be positive")
    idx, ks, logw = _support(p)
    if method == "stationary":
        st = _Stationary(t, ks, logw)
        value, rho_s = st.value, st.rho
    elif method == "multistart":
        value, rho_s = _multistart(t, ks, logw)
    else:
        raise ValueError(f"unknown method {method!r}")
    rho = np.zeros(p.m)
    rho[idx] = rho_s
    return value, SimplexPoint(tuple(rho.tolist()))


def rate_critical_time(p) -> tuple[float, float]:
    """(t*, E_{t*}): the unique minimum of t -> E_t, at t* = sum|p_k| / sum k|p_k|."""
    p = as_ic(p)
    a = np.abs(p.as_array())
    k = np.arange(1, a.size + 1)
    return float(a.sum() / np.dot(k, a)), -math.log(float(a.sum()))


def tc_nonprob(p, grid_points: int = 256, touch_tol: float = 1e-12) -> BlowupResult:
    """First t at which E_t stops being positive; a lower bound on the shock time.

    Scans a geometric grid on (0, 10^3 / sum|p_k|]. A sign change is refined
    by bisection. Because E_t can touch zero tangentially (it does for every
    probabilistic p), local minima between grid points are also located from
    dE/dt = mu - 1/t and tested against ``touch_tol``.
    """
    p = as_ic(p)
    if not any(p.p):
        return BlowupResult(math.inf, Method.RATE_BISECTION, Guarantee.LOWER_BOUND)
    idx, ks, logw = _support(p)
    total = float(np.abs(p.as_array()).sum())
    t_max = 1e3 / total
    grid = np.geomspace(1e-6 / total, t_max, grid_points)

    def E(t):
        return _Stationary(t, ks, logw)

    def first_crossing(a, b):
        return brentq(lambda s: E(s).value, a, b, xtol=1e-15, rtol=1e-13, maxiter=500)

    prev = E(grid[0])
    if prev.value <= 0:
        return BlowupResult(float(grid[0]), Method.RATE_BISECTION, Guarantee.LOWER_BOUND)
    for a, b in zip(grid[:-1], grid[1:]):
        cur = E(b)
        if prev.dvalue_dt < 0 <= cur.dvalue_dt:
            t_min = b if cur.dvalue_dt == 0 else brentq(
                lambda s: E(s).dvalue_dt, a, b, xtol=1e-15, rtol=1e-14, maxiter=500)
            v_min = E(t_min).value
            if v_min < -touch_tol:
                return BlowupResult(first_crossing(a, t_min), Method.RATE_BISECTION,
                                    Guarantee.LOWER_BOUND)
            if v_min <= touch_tol:
                return BlowupResult(float(t_min), Method.RATE_BISECTION, Guarantee.LOWER_BOUND)
        if cur.value <= 0:
            return BlowupResult(first_crossing(a, b), Method.RATE_BISECTION, Guarantee.LOWER_BOUND)
        prev = cur
    return BlowupResult(math.inf, Method.RATE_BISECTION, Guarantee.LOWER_BOUND)


# ---------------------------------------------------------------------------
# two-type phase diagram
# ---------------------------------------------------------------------------

def classify_two_type(p1: float, p2: float) -> PhaseRegion:
    if abs(p1) + abs(p2) < 1:
        return PhaseRegion.GLOBAL_1
    if p1 < 0 and p2 < 0:
        return PhaseRegion.GLOBAL_2
    if p1 < 0 < p2 and p1 + p2 < 1:
        return PhaseRegion.GLOBAL_3
    if p1 > 0 and p2 > 0 and p1 + p2 >= 1:
        return PhaseRegion.BLOWUP_4
    if p1 < 0 < p2 and p1 + p2 >= 1:
        return PhaseRegion.BLOWUP_5
    return PhaseRegion.UNCLASSIFIED


def two_type_critical_point(p1: float, p2: float) -> tuple[float, float, float]:
    """Critical point (t, rho_1, value) of the two-type rate objective."""
    if p1 == 0 or p2 == 0:
        raise PreconditionError("degenerate two-type data; use the single-type formulas")
    a1, a2 = abs(p1), abs(p2)
    return (a1 + a2) / (a1 + 2 * a2), a1 / (a1 + a2), math.log(1.0 / (a1 + a2))


# ---------------------------------------------------------------------------
# Cramer bound
# ---------------------------------------------------------------------------

def _golden_max(f, lo: float, hi: float, tol: float = 1e-12) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * (1.0 + abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def cramer_rate_at_one(t: float, F: Nonlinearity, q: AuxiliaryDist,
                       lam_range: tuple[float, float] = (-40.0, 40.0)) -> float:
    """Lambda*(1) = sup_lambda {lambda - log sum_k q_k exp(t k F'(e^lambda))}."""
    log_q = np.log(q.as_array())
    ks = np.arange(1, q.m + 1)
    d1 = F.derivative_coeffs(1)

    def objective(lam: float) -> float:
        with np.errstate(over="ignore"):
            s = math.exp(lam)
            fp = 0.0
            for a in reversed(d1):
                fp = fp * s + a
            if not math.isfinite(fp):
                return -math.inf
            return lam - float(logsumexp(log_q + t * ks * fp))

    return _golden_max(objective, *lam_range)[1]


def cramer_tc_bound(F: Nonlinearity, p, q: AuxiliaryDist, grid_points: int = 64,
                    rtol: float = 1e-8) -> BlowupResult:
    """Lower bound on the validity time: first t with log c >= Lambda*(1).

    c = max(1, (|p_k|/q_k)^2). Lambda*(1) vanishes exactly at the criticality
    time t* = 1 / (F''(1) sum k q_k) where the offspring mean reaches 1, so the
    condition always fails by t*; the scan runs on (0, t*].
    """
    p = as_ic(p)
    require_valid(F)
    if p.m > q.m:
        raise PreconditionError("auxiliary distribution must cover every type of p")
    pa = p.as_array(q.m)
    c = max(1.0, float(np.max(np.abs(pa) / q.as_array())) ** 2)
    log_c = math.log(c)
    curv = eval_nonlinearity(F, 1.0, 2)
    if curv <= 0.0:
        warnings.warn("F''(1) = 0: offspring law is degenerate, no finite bound", RuntimeWarning)
        return BlowupResult(math.inf, Method.CRAMER_BOUND, Guarantee.LOWER_BOUND)
    t_star = 1.0 / (curv * q.first_moment())

    def phi(t: float) -> float:
        return cramer_rate_at_one(t, F, q) - log_c

    grid = np.geomspace(t_star * 1e-6, t_star, grid_points)
    lo = None
    for i, t in enumerate(grid[:-1]):
        if phi(t) <= 0.0:
            if i == 0:
                return BlowupResult(float(t), Method.CRAMER_BOUND, Guarantee.LOWER_BOUND)
            lo, hi = float(grid[i - 1]), float(t)
            break
    else:
        if log_c == 0.0:
            return BlowupResult(t_star, Method.CRAMER_BOUND, Guarantee.LOWER_BOUND)
        lo, hi = float(grid[-2]), t_star
    while hi - lo > rtol * hi:
        mid = math.sqrt(lo * hi)
        if phi(mid) <= 0.0:
            hi = mid
        else:
            lo = mid
    return BlowupResult(lo, Method.CRAMER_BOUND, Guarantee.LOWER_BOUND)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def tc_shock(p, F: Nonlinearity, t_max: float = 50.0) -> BlowupResult:
    """Shock time at x = 0 by continuation.

    Exact for nonnegative data, where the first shock sits at x = 0. With
    mixed signs it only bounds the smooth lifetime from above.
    """
    p = as_ic(p)
    rep = detect_shock(p, F, t_max)
    g = Guarantee.EXACT if all(v >= 0 for v in p.p) else Guarantee.UPPER_BOUND
    return BlowupResult(rep.t_shock, Method.SHOCK_DETECTION, g)


def applicable_methods(p, F: Nonlinearity) -> list[str]:
    p = as_ic(p)
    out = []
    if (F.is_burgers and p.m == 1) or p.probabilistic:
        out.append("exact")
    if F.is_burgers:
        out.append("rate")
    out += ["cramer", "shock"]
    return out


def blowup_time(p, F: Nonlinearity, method: str, q: AuxiliaryDist | None = None) -> BlowupResult:
    """One of exact / rate / cramer / shock."""
    p = as_ic(p)
    require_valid(F)
    if method == "exact":
        if F.is_burgers and p.m == 1:
            return tc_single(p.p[0])
        if p.probabilistic:
            return tc_prob_burgers(p) if F.is_burgers else tc_prob_general(p, F)
        raise PreconditionError("no closed-form blow-up time for this data")
    if method == "rate":
        if not F.is_burgers:
            raise PreconditionError("the rate functional criterion covers Burgers only")
        return tc_nonprob(p)
    if method == "cramer":
        return cramer_tc_bound(F, p, q or AuxiliaryDist.default_for(p))
    if method == "shock":
        return tc_shock(p, F)
    raise PreconditionError(f"unknown blow-up method {method!r}")


def validity_guard(p, F: Nonlinearity, q: AuxiliaryDist | None = None) -> BlowupResult:
    """Best certified time below which the series representation is valid."""
    p = as_ic(p)
    if "exact" in applicable_methods(p, F):
        return blowup_time(p, F, "exact")
    if F.is_burgers:
        return tc_nonprob(p)
    return cramer_tc_bound(F, p, q or AuxiliaryDist.default_for(p))

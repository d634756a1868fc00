"""
Deterministic reference solvers for u_t + (F(u))_x = 0 with exponential data.

Along characteristics the solution satisfies

    u = sum_k p_k e^{-kx} exp(t k F'(u)),

and stays smooth while A(t, x) = 1 - t F''(u) sum_k k p_k e^{-kx} exp(t k F'(u))
is nonzero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

from .dist_core import (
    as_ic,
    ExponentialIC,
    Nonlinearity,
    PreconditionError,
    lambert_w0,
)

RESIDUAL_TOL = 1e-12


class NearShockError(ArithmeticError):
    """|A(t, x)| is too small for the implicit-function derivatives to be trusted."""


@dataclass(frozen=True)
class ImplicitSolveResult:
    u: float
    denominator_A: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class ShockReport:
    t_shock: float
    x_shock: float
    bracket: tuple[float, float]
    fold: bool = False  # continuation lost the branch instead of A changing sign


@dataclass
class FVField:
    x: np.ndarray           # cell centres
    u: np.ndarray           # cell averages
    dx: float
    t: float
    steps: int
    initial_mass: float
    boundary_flux_integral: float  # int_0^t (F(u)|_{x=0} - F(u)|_{x=L}) dt
    max_mass_defect: float         # worst per-step |d(mass) - dt (F_left - F_right)|
    max_cfl: float

    @property
    def mass(self) -> float:
        return float(np.sum(self.u) * self.dx)


class _Implicit:
    """Pieces of the implicit equation at fixed (t, x)."""

    def __init__(self, t: float, x: float, p: ExponentialIC, F: Nonlinearity):
        self.t = t
        pa = p.as_array()
        self.ks = np.arange(1, pa.size + 1, dtype=float)
        nz = pa != 0
        self.ks = self.ks[nz]
        self.sign = np.sign(pa[nz])
        self.logc = np.log(np.abs(pa[nz])) - self.ks * x
        self.d1 = F.derivative_coeffs(1)
        self.d2 = F.derivative_coeffs(2)

    def evaluate(self, u: float):
        fp = P.polyval(u, self.d1)
        fpp = P.polyval(u, self.d2)
        with np.errstate(over="ignore"):
            terms = self.sign * np.exp(self.logc + self.t * self.ks * fp)
        S = math.fsum(terms.tolist())
        B = math.fsum((self.ks * terms).tolist())
        A = 1.0 - self.t * fpp * B
        return u - S, A, B, fp, fpp


def solve_implicit_u(t: float, x: float, p, F: Nonlinearity, guess: float | None = None,
                     max_iter: int = 200) -> ImplicitSolveResult:
    """Damped Newton on u - sum p_k e^{-kx} exp(t k F'(u)); starts from ``guess`` or u(0, x)."""
    p = as_ic(p)
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    eq = _Implicit(t, x, p, F)
    u = p(x) if guess is None else float(guess)
    r, A, *_ = eq.evaluate(u)
    for it in range(max_iter + 1):
        if math.isfinite(r) and abs(r) <= RESIDUAL_TOL * (1.0 + abs(u)):
            return ImplicitSolveResult(u, A, it, True)
        if it == max_iter or A == 0.0 or not math.isfinite(r):
            break
        step = r / A
        lam = 1.0
        for _ in range(40):
            u_new = u - lam * step
            r_new, A_new, *_ = eq.evaluate(u_new)
            if math.isfinite(r_new) and abs(r_new) < abs(r):
                break
            lam *= 0.5
        else:
            break
        u, r, A = u_new, r_new, A_new
    return ImplicitSolveResult(u, A, max_iter, False)


def partial_derivatives(t: float, x: float, p, F: Nonlinearity,
                        guess: float | None = None) -> tuple[float, float]:
    """(u_t, u_x) from implicit differentiation: u_x = -B/A, u_t = F'(u) B/A."""
    p = as_ic(p)
    sol = solve_implicit_u(t, x, p, F, guess)
    if not sol.converged:
        raise NearShockError(f"implicit equation did not converge at t={t}, x={x}")
    _, A, B, fp, _ = _Implicit(t, x, p, F).evaluate(sol.u)
    if abs(A) <= 1e-10:
        raise NearShockError(f"|A| = {abs(A):.3e} at t={t}, x={x}")
    return fp * B / A, -B / A


def solve_by_continuation(t: float, x: float, p, F: Nonlinearity, steps: int = 32) -> ImplicitSolveResult:
    """Follow the root from u(0, x) to time t with warm-started Newton solves.

    Stays on the physical branch where a cold start from the initial value
    could land on another root.
    """
    p = as_ic(p)
    u = p(x)
    sol = ImplicitSolveResult(u, 1.0, 0, True)
    ts = np.linspace(0.0, t, steps + 1)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        guess = u + (t1 - t0) * _u_t(_Implicit(t0, x, p, F), u)
        sol = solve_implicit_u(t1, x, p, F, guess=guess)
        if not sol.converged:
            sol = solve_implicit_u(t1, x, p, F, guess=u)
        if not sol.converged:
            return sol
        u = sol.u
    return sol


def _u_t(eq: _Implicit, u: float) -> float:
    _, A, B, fp, _ = eq.evaluate(u)
    return fp * B / A if A != 0 else 0.0


def detect_shock(p, F: Nonlinearity, t_max: float, x: float = 0.0,
                 rtol: float = 1e-10, h0: float | None = None) -> ShockReport:
    """First sign change of A(t, x) along the continued solution branch.

    Marches in t with a predictor (u_t) and a warm-started Newton corrector,
    shrinking the step when Newton fails or A drops fast, then bisects the
    bracket. If the branch ends in a fold (Newton fails as the step vanishes)
    the report carries ``fold=True``.
    """
    p = as_ic(p)
    if t_max <= 0:
        raise PreconditionError("t_max must be positive")
    h_max = t_max / 50.0
    h = h0 if h0 is not None else min(h_max, 1e-3 * max(t_max, 1.0))
    t = 0.0
    u = p(x)
    A = 1.0

    def solve_at(tt: float, u_from: float, t_from: float):
        pred = u_from + (tt - t_from) * _u_t(_Implicit(t_from, x, p, F), u_from)
        sol = solve_implicit_u(tt, x, p, F, guess=pred)
        if not sol.converged:
            sol = solve_implicit_u(tt, x, p, F, guess=u_from)
        return sol

    while t < t_max:
        t_new = min(t + h, t_max)
        sol = solve_at(t_new, u, t)
        if not sol.converged or (sol.denominator_A > 0 and sol.denominator_A < 0.5 * A and h > 1e-9):
            if not sol.converged and h <= 1e-13 * max(1.0, t):
                return ShockReport(t, x, (t, t + 2 * h), fold=True)
            if sol.converged and sol.denominator_A > 0:
                # A is falling quickly: accept only small steps
                if sol.denominator_A >= 0.25 * A:
                    t, u, A = t_new, sol.u, sol.denominator_A
                h *= 0.5
                continue
            h *= 0.5
            continue
        if sol.denominator_A <= 0.0:
            return _bisect_shock(p, F, x, t, u, t_new, solve_at, rtol)
        t, u, A = t_new, sol.u, sol.denominator_A
        h = min(h * 1.5, h_max)
    return ShockReport(math.inf, x, (t_max, math.inf))


def _bisect_shock(p, F, x, lo, u_lo, hi, solve_at, rtol) -> ShockReport:
    fold = False
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        sol = solve_at(mid, u_lo, lo)
        if sol.converged and sol.denominator_A > 0:
            lo, u_lo = mid, sol.u
        else:
            fold = fold or not sol.converged
            hi = mid
    return ShockReport(0.5 * (lo + hi), x, (lo, hi), fold)


def lambert_solution_single(c: float, t: float, x: float) -> float:
    """u = -W(-t c e^{-t-x}) / t, the single-exponential Burgers solution."""
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    if t == 0:
        return c * math.exp(-x)
    z = -t * c * math.exp(-t - x)
    if z < -math.exp(-1.0):
        raise PreconditionError("argument below -1/e: past the blow-up time")
    return -lambert_w0(z) / t


def two_type_fixed_point(t: float, x: float, p1: float, p2: float) -> tuple[float, float]:
    """Unique root v in (0, 1] of v = e^{-x} exp(t (p1 v + p2 v^2 - 1)); returns (v, p1 v + p2 v^2).

    Defined for p1 < 0 < p2 with p1 + p2 < 1. Solved in y = log v.
    """
    if not (p1 < 0 < p2 and p1 + p2 < 1):
        raise PreconditionError("two-type fixed point needs p1 < 0 < p2 and p1 + p2 < 1")
    if t < 0 or x < 0:
        raise PreconditionError("t and x must be nonnegative")

    def h(y):
        v = math.exp(y)
        return -x + t * (p1 * v + p2 * v * v - 1.0) - y

    if h(0.0) >= 0.0:
        y = 0.0
    else:
        lo = -x - t * (1.0 + abs(p1) + p2) - 1.0
        y = brentq(h, lo, 0.0, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    v = math.exp(y)
    return v, p1 * v + p2 * v * v


# ---------------------------------------------------------------------------
# finite volumes
# ---------------------------------------------------------------------------

def _cell_averages(p: ExponentialIC, edges: np.ndarray) -> np.ndarray:
    dx = np.diff(edges)
    out = np.zeros(edges.size - 1)
    for k, pk in enumerate(p.p, start=1):
        if pk:
            out += pk * (np.exp(-k * edges[:-1]) - np.exp(-k * edges[1:])) / (k * dx)
    return out


def fv_solve(F: Nonlinearity, p, L: float, n_cells: int, t_end: float,
             cfl: float = 0.9) -> FVField:
    """First-order finite volumes with the local Lax-Friedrichs flux and forward Euler.

    The ghost cell left of x = 0 carries the characteristic solution u(t, 0);
    the right boundary copies the last cell.
    """
    p = as_ic(p)
    if L <= 0 or t_end < 0 or n_cells < 2:
        raise PreconditionError("need L > 0, t_end >= 0 and at least two cells")
    edges = np.linspace(0.0, L, n_cells + 1)
    dx = L / n_cells
    u = _cell_averages(p, edges)
    c0 = np.array(F.coeffs)
    c1 = np.array(F.derivative_coeffs(1))
    mass0 = float(np.sum(u) * dx)
    t = 0.0
    steps = 0
    flux_int = 0.0
    defect = 0.0
    worst_cfl = 0.0
    u_left = p(0.0)
    while t < t_end:
        ext = np.concatenate([[u_left], u, [u[-1]]])
        f = P.polyval(ext, c0)
        speed = np.abs(P.polyval(ext, c1))
        alpha = np.maximum(speed[:-1], speed[1:])
        flux = 0.5 * (f[:-1] + f[1:]) - 0.5 * alpha * (ext[1:] - ext[:-1])
        amax = float(alpha.max())
        dt = t_end - t if amax == 0 else min(cfl * dx / amax, t_end - t)
        ratio = amax * dt / dx
        if ratio > cfl * (1 + 1e-12):
            raise RuntimeError(f"CFL violated: {ratio}")
        worst_cfl = max(worst_cfl, ratio)
        mass_before = math.fsum(u.tolist()) * dx
        u = u - (dt / dx) * (flux[1:] - flux[:-1])
        inflow = dt * (flux[0] - flux[-1])
        defect = max(defect, abs(math.fsum(u.tolist()) * dx - mass_before - inflow))
        flux_int += inflow
        t = t + dt if t + dt < t_end else t_end
        steps += 1
        sol = solve_implicit_u(t, 0.0, p, F, guess=u_left)
        if not sol.converged:
            raise PreconditionError(f"boundary value at x = 0 unavailable at t = {t} (past shock?)")
        u_left = sol.u
    return FVField(0.5 * (edges[:-1] + edges[1:]), u, dx, t, steps, mass0, flux_int, defect, worst_cfl)

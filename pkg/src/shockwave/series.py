"""
Exact total-progeny coefficients and truncated series for u(t, x).

Coefficients of the multi-type Poisson branching process come from the
closed Lagrange-inversion forms; ``formal_fixedpoint_coeffs`` recomputes the
same numbers by iterating the implicit PGF system on truncated multivariate
power series, independently of the closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .dist_core import (
    as_ic,
    AuxiliaryDist,
    ExponentialIC,
    Nonlinearity,
    PreconditionError,
    require_valid,
)


class SeriesDivergenceError(ArithmeticError):
    """Shell magnitudes kept growing; the series is outside its convergence region."""

    def __init__(self, message: str, shells: np.ndarray):
        super().__init__(message)
        self.shells = shells


@dataclass(frozen=True)
class MultiIndex:
    n: tuple[int, ...]

    def __init__(self, n):
        n = tuple(int(v) for v in n)
        if any(v < 0 for v in n):
            raise ValueError("multi-index entries must be nonnegative")
        object.__setattr__(self, "n", n)

    @property
    def N(self) -> int:
        return sum(self.n)

    @property
    def M(self) -> int:
        return sum(k * v for k, v in enumerate(self.n, start=1))

    @property
    def is_zero(self) -> bool:
        return not any(self.n)


@dataclass(frozen=True)
class TruncationPolicy:
    M_max: int = 80
    tail_tolerance: float = 1e-12
    divergence_run: int = 5


class SeriesValue(NamedTuple):
    value: float
    tail_bound: float
    partial_sum: float
    status: str  # "ok" or "inconclusive"
    shells: np.ndarray


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def _coerce(n) -> MultiIndex:
    return n if isinstance(n, MultiIndex) else MultiIndex(n)


def _log_poisson_product(n: np.ndarray, M, t: float, w: np.ndarray):
    """sum_l [n_l log(t M w_l) - log n_l!] with the convention 0 log 0 = 0."""
    n = np.asarray(n, dtype=float)
    M = np.asarray(M, dtype=float)
    with np.errstate(divide="ignore"):
        logw = np.log(t * M[..., None] * w)
    terms = np.where(n > 0, n * logw, 0.0) - gammaln(n + 1.0)
    return terms.sum(axis=-1)


def progeny_coeff(n, k: int, t: float, q: AuxiliaryDist) -> float:
    """[s^n] G_{T^(k)} for the Poisson multi-type process with child types drawn from q.

    ``k`` is 1-based. At t = 0 the law is a point mass at the root (e_k).
    """
    n = _coerce(n)
    qa = q.as_array()
    if len(n.n) != qa.size:
        raise ValueError("multi-index length must equal the number of types")
    if n.is_zero:
        raise ValueError("n must be nonzero")
    if not 1 <= k <= qa.size:
        raise ValueError("type index out of range")
    nk = n.n[k - 1]
    if nk == 0:
        return 0.0
    if t == 0:
        return 1.0 if n.N == 1 else 0.0
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    M = n.M
    arr = np.array(n.n)
    log_val = (-t * M + _log_poisson_product(arr, M, t, qa)
               + math.log(k * nk) - math.log(t) - 2.0 * math.log(M) - math.log(qa[k - 1]))
    return math.exp(float(log_val))


def weighted_progeny_coeff(n, t: float, q: AuxiliaryDist) -> float:
    """[s^n] sum_k q_k G_{T^(k)}: root type drawn from q."""
    n = _coerce(n)
    qa = q.as_array()
    if len(n.n) != qa.size:
        raise ValueError("multi-index length must equal the number of types")
    if n.is_zero:
        raise ValueError("n must be nonzero")
    if t == 0:
        if n.N != 1:
            return 0.0
        return float(qa[n.n.index(1)])
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    M = n.M
    log_val = -t * M - math.log(t * M) + _log_poisson_product(np.array(n.n), M, t, qa)
    return math.exp(float(log_val))


@lru_cache(maxsize=4096)
def _shell(M: int, m: int) -> np.ndarray:
    """All n in N_0^m with sum_k k n_k = M, lexicographic in (n_1, ..., n_m)."""
    out: list[tuple[int, ...]] = []

    def rec(k: int, remaining: int, prefix: tuple[int, ...]):
        if k == m:
            if remaining % m == 0:
                out.append(prefix + (remaining // m,))
            return
        for nk in range(remaining // k + 1):
            rec(k + 1, remaining - k * nk, prefix + (nk,))

    rec(1, M, ())
    arr = np.array(out, dtype=np.int64).reshape(-1, m)
    arr.setflags(write=False)
    return arr


def shell_indices(M: int, m: int) -> np.ndarray:
    if M < 1 or m < 1:
        raise ValueError("M and m must be positive")
    return _shell(M, m)


def _lattice(absolute: list[float]) -> tuple[int, int]:
    """(offset, period) of the shells that can be nonzero.

    Data supported on multiples of d, or a flux with Y supported on a
    sublattice, leave whole residue classes of shells empty; ratio tests
    must step over them.
    """
    nz = [i for i, a in enumerate(absolute) if a > 0.0]
    if len(nz) < 2:
        return (nz[0] if nz else 0), 1
    d = 0
    for i in nz[1:]:
        d = math.gcd(d, i - nz[0])
    return nz[0] % d, d


def _tail_sum(s0: float, n0: int, r: float, alpha: float, d: int, tol: float = 1e-18) -> float:
    """sum_{j>=1} s0 prod_{i<=j} r (1 - alpha/(n0 + i d)), the modelled tail after shell n0."""
    total, term = 0.0, s0
    n = n0
    for _ in range(10**6):
        n += d
        term *= r * (1.0 - alpha / n)
        total += term
        if abs(term) <= tol * (abs(total) + 1e-300):
            break
    return total


def _finish(signed: list[float], absolute: list[float], policy: TruncationPolicy) -> SeriesValue:
    """Partial sum plus a modelled tail.

    On the nonzero sublattice the magnitude ratios are fitted as
    r (1 - alpha/n), which captures the n^(-3/2) prefactor typical of these
    Lagrange series; ``tail_bound`` uses the larger of r and the observed
    ratios. The signed tail is added when the sign pattern is stable.
    """
    partial = math.fsum(signed)
    shells = np.array(signed)
    off, d = _lattice(absolute)
    idx = list(range(off, len(absolute), d))
    if len(idx) < 3 or absolute[idx[-1]] == 0.0:
        return SeriesValue(partial, 0.0, partial, "ok", shells)
    i2, i1, i0 = idx[-3:]
    a2, a1, a0 = absolute[i2], absolute[i1], absolute[i0]
    if a1 == 0.0 or a2 == 0.0:
        return SeriesValue(partial, math.inf, partial, "inconclusive", shells)
    rho_prev, rho = a1 / a2, a0 / a1
    n_prev, n = i1 + 1, i0 + 1
    # rho_n = r (1 - alpha / n): solve from the last two ratios
    r = (n * rho - n_prev * rho_prev) / (n - n_prev)
    alpha = n * (1.0 - rho / r) if r > 0 else 0.0
    r_bound = max(rho, rho_prev, r)
    if r_bound >= 1.0 or not math.isfinite(r_bound):
        return SeriesValue(partial, math.inf, partial, "inconclusive", shells)
    if 0.0 < r < 1.0 and alpha >= 0.0:
        tail_abs = _tail_sum(a0, n, r, alpha, d)
    else:
        tail_abs = a0 * r_bound / (1.0 - r_bound)
    tail_bound = max(tail_abs, a0 * max(rho, rho_prev) / (1.0 - max(rho, rho_prev)))
    s0, s1, s2 = signed[i0], signed[i1], signed[i2]
    tail_est = 0.0
    same_sign = s0 * s1 > 0 and s1 * s2 > 0
    alternating = s0 * s1 < 0 and s1 * s2 < 0
    if same_sign or alternating:
        sign = 1.0 if same_sign else -1.0
        if 0.0 < r < 1.0 and alpha >= 0.0 and abs(rho - rho_prev) <= 0.2 * rho:
            tail_est = math.copysign(_tail_sum(abs(s0), n, sign * r, alpha, d), s0) if same_sign \
                else _tail_sum(s0, n, -r, alpha, d)
    return SeriesValue(partial + tail_est, tail_bound, partial, "ok", shells)


def _check_divergence(absolute: list[float], policy: TruncationPolicy) -> None:
    run = policy.divergence_run
    nz = [a for a in absolute if a > 0.0]
    if len(nz) > run and all(nz[-i] > nz[-i - 1] for i in range(1, run + 1)):
        raise SeriesDivergenceError(
            f"shell magnitudes increased for {run} consecutive shells", np.array(absolute))
    if absolute and not math.isfinite(absolute[-1]):
        raise SeriesDivergenceError("shell magnitude overflowed", np.array(absolute))


def eval_u_series(t: float, x: float, p: ExponentialIC,
                  policy: TruncationPolicy = TruncationPolicy()) -> SeriesValue:
    """Burgers solution as the shell-ordered series sum_n e^{-tM-Mx}/(tM) prod (tM p_k)^{n_k}/n_k!.

    Shells of constant weighted degree M are summed in increasing M and
    lexicographically inside a shell. ``value`` includes a geometric tail
    extrapolation; ``partial_sum`` is the plain truncated sum.
    Raises ``SeriesDivergenceError`` when shells grow ``divergence_run`` times in a row.
    """
    p = as_ic(p)
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    if t == 0:
        v = p(x)
        return SeriesValue(v, 0.0, v, "ok", np.array([]))
    pa = p.as_array()
    m = pa.size
    abs_p = np.abs(pa)
    neg = pa < 0
    zero = pa == 0
    signed: list[float] = []
    absolute: list[float] = []
    for M in range(1, policy.M_max + 1):
        idx = shell_indices(M, m)
        keep = ~np.any(idx[:, zero] > 0, axis=1) if zero.any() else np.ones(len(idx), bool)
        idx = idx[keep]
        if idx.size == 0:
            signed.append(0.0)
            absolute.append(0.0)
            continue
        logs = (-t * M - M * x - math.log(t * M)
                + _log_poisson_product(idx, np.full(len(idx), M), t, np.where(zero, 1.0, abs_p)))
        signs = np.where(idx[:, neg].sum(axis=1) % 2 == 1, -1.0, 1.0)
        with np.errstate(over="ignore"):
            vals = np.exp(logs)
        absolute.append(math.fsum(vals.tolist()))
        signed.append(math.fsum((signs * vals).tolist()))
        _check_divergence(absolute, policy)
    return _finish(signed, absolute, policy)


def _series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size
    return np.convolve(a, b)[:n]


def eval_u_series_general(t: float, x: float, p: ExponentialIC, F: Nonlinearity,
                          policy: TruncationPolicy = TruncationPolicy()) -> SeriesValue:
    """Series for a general valid flux with probabilistic data.

    u = G_Z(G_T(e^{-x})) with G_T = s G_U(G_T), G_U = exp(t F'(G_Z)).
    Lagrange inversion gives [s^n] G_Z(G_T) = (1/n) sum_k k p_k [w^{n-k}] G_U(w)^n,
    and G_U^n is expanded with the exponential recurrence, every coefficient
    being a probability so the arithmetic stays within [0, 1].
    """
    require_valid(F)
    p = as_ic(p)
    if not p.probabilistic:
        raise PreconditionError("general-flux series needs probabilistic initial data")
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    if t == 0:
        v = p(x)
        return SeriesValue(v, 0.0, v, "ok", np.array([]))
    N = policy.M_max
    gz = np.zeros(N + 1)
    pa = p.as_array()
    gz[1:min(N, pa.size) + 1] = pa[:N]
    # h(w) = t F'(G_Z(w)) as a truncated series (Horner in series arithmetic)
    d1 = F.derivative_coeffs(1)
    h = np.zeros(N + 1)
    for c in reversed(d1):
        h = _series_mul(h, gz)
        h[0] += c
    h *= t
    if N * abs(h[0]) > 700:
        raise PreconditionError("M_max * t * |a_1| too large for double-precision expansion")
    g = h.copy()
    g[0] = 0.0
    ig = np.arange(N + 1) * g  # i g_i
    ns = np.arange(1, N + 1, dtype=float)
    # E[n-1, j] = [w^j] exp(n h(w))
    E = np.zeros((N, N + 1))
    E[:, 0] = np.exp(ns * h[0])
    for j in range(1, N + 1):
        E[:, j] = (ns / j) * (E[:, j - 1::-1] @ ig[1:j + 1])
    signed: list[float] = []
    absolute: list[float] = []
    for n in range(1, N + 1):
        c = 0.0
        for k in range(1, min(n, pa.size) + 1):
            if pa[k - 1] != 0.0:
                c += k * pa[k - 1] * E[n - 1, n - k]
        term = c / n * math.exp(-n * x)
        signed.append(term)
        absolute.append(abs(term))
        _check_divergence(absolute, policy)
    return _finish(signed, absolute, policy)


def single_type_radius_check(t: float, c: float) -> bool:
    """Whether c e^{-x} lies inside the Borel PGF radius (1/t) e^{t-1} for every x >= 0."""
    if t <= 0:
        raise PreconditionError("t must be positive")
    return t * abs(c) < math.exp(t - 1.0)


def kernel_determinant(t: float, q: AuxiliaryDist, r) -> tuple[float, float]:
    """det(I - [t i q_j r_i]) numerically and via the rank-one identity 1 - sum t k q_k r_k."""
    qa = q.as_array()
    r = np.asarray(r, dtype=float)
    i = np.arange(1, qa.size + 1)
    K = np.eye(qa.size) - t * np.outer(i * r, qa)
    return float(np.linalg.det(K)), 1.0 - float(np.sum(t * i * qa * r))


# ---------------------------------------------------------------------------
# formal power series oracle
# ---------------------------------------------------------------------------

class FormalSeries:
    """Multivariate power series truncated at total degree D (dense storage)."""

    def __init__(self, coeffs: np.ndarray, degree: int):
        self.degree = degree
        self.coeffs = coeffs * _degree_mask(coeffs.ndim, degree)

    @classmethod
    def zero(cls, m: int, degree: int) -> "FormalSeries":
        return cls(np.zeros((degree + 1,) * m), degree)

    @classmethod
    def constant(cls, c: float, m: int, degree: int) -> "FormalSeries":
        s = cls.zero(m, degree)
        s.coeffs[(0,) * m] = c
        return s

    @property
    def m(self) -> int:
        return self.coeffs.ndim

    def __add__(self, other: "FormalSeries") -> "FormalSeries":
        return FormalSeries(self.coeffs + other.coeffs, self.degree)

    def scale(self, c: float) -> "FormalSeries":
        return FormalSeries(self.coeffs * c, self.degree)

    def __mul__(self, other: "FormalSeries") -> "FormalSeries":
        D = self.degree
        a, b = self.coeffs, other.coeffs
        if np.count_nonzero(a) > np.count_nonzero(b):
            a, b = b, a
        out = np.zeros_like(b)
        for alpha in zip(*np.nonzero(a)):
            dst = tuple(slice(ai, None) for ai in alpha)
            src = tuple(slice(0, D + 1 - ai) for ai in alpha)
            out[dst] += a[alpha] * b[src]
        return FormalSeries(out, D)

    def shift(self, axis: int) -> "FormalSeries":
        """Multiply by the monomial s_{axis+1}."""
        out = np.zeros_like(self.coeffs)
        dst = [slice(None)] * self.m
        src = [slice(None)] * self.m
        dst[axis] = slice(1, None)
        src[axis] = slice(0, -1)
        out[tuple(dst)] = self.coeffs[tuple(src)]
        return FormalSeries(out, self.degree)

    def exp(self) -> "FormalSeries":
        """exp of the series by truncated Taylor composition (Horner form)."""
        c0 = self.coeffs[(0,) * self.m]
        S = self + FormalSeries.constant(-c0, self.m, self.degree)
        one = FormalSeries.constant(1.0, self.m, self.degree)
        acc = one
        for j in range(self.degree, 0, -1):
            acc = one + (S * acc).scale(1.0 / j)
        return acc.scale(math.exp(c0))

    def __pow__(self, k: int) -> "FormalSeries":
        acc = FormalSeries.constant(1.0, self.m, self.degree)
        for _ in range(k):
            acc = acc * self
        return acc

    def coefficient(self, n) -> float:
        return float(self.coeffs[tuple(n)])


@lru_cache(maxsize=64)
def _degree_mask(m: int, degree: int) -> np.ndarray:
    grids = np.indices((degree + 1,) * m).sum(axis=0)
    return (grids <= degree).astype(float)


def formal_fixedpoint_coeffs(t: float, q: AuxiliaryDist, degree: int) -> dict[tuple[int, tuple[int, ...]], float]:
    """Coefficients of G_{T^(k)} up to total degree ``degree`` from the implicit system

        G_k = s_k exp(t k (sum_l q_l G_l - 1)),

    iterated from zero. Each sweep fixes one more total degree, so ``degree``
    sweeps suffice. Keys are (k, n) with k 1-based.
    """
    m = q.m
    if degree > 12 or m > 4:
        raise PreconditionError("oracle limited to degree <= 12 and m <= 4")
    qa = q.as_array()
    G = [FormalSeries.zero(m, degree) for _ in range(m)]
    for _ in range(degree):
        S = FormalSeries.zero(m, degree)
        for l in range(m):
            S = S + G[l].scale(t * qa[l])
        E = S.exp()
        new = []
        Ek = FormalSeries.constant(1.0, m, degree)
        for k in range(1, m + 1):
            Ek = Ek * E
            new.append(Ek.scale(math.exp(-t * k)).shift(k - 1))
        if all(np.array_equal(a.coeffs, b.coeffs) for a, b in zip(new, G)):
            break
        G = new
    out: dict[tuple[int, tuple[int, ...]], float] = {}
    for k in range(1, m + 1):
        for n in np.ndindex(*G[k - 1].coeffs.shape):
            if 1 <= sum(n) <= degree:
                out[(k, tuple(int(v) for v in n))] = float(G[k - 1].coeffs[n])
    return out


def _m_cap(F: Nonlinearity, m: int) -> int:
    if not F.is_burgers:
        return 1600
    return {1: 2560, 2: 1280}.get(m, 320)


def eval_u_adaptive(t: float, x: float, p, F: Nonlinearity, M_start: int = 80,
                    target: float = 1e-10) -> SeriesValue:
    """Double M_max until the tail bound drops below ``target`` or a size cap is hit."""
    p = as_ic(p)
    M = M_start
    while True:
        policy = TruncationPolicy(M_max=M)
        res = eval_u_series(t, x, p, policy) if F.is_burgers else eval_u_series_general(t, x, p, F, policy)
        if res.tail_bound <= target or M >= _m_cap(F, p.m):
            return res
        M = min(2 * M, _m_cap(F, p.m))

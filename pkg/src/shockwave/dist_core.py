"""
Core types and special functions.

Holds the flux polynomial, the exponential initial condition, the auxiliary
type distribution, log-space signed weights, the principal Lambert W branch,
the Borel law and the offspring / composite generating functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

VALIDITY_TOL = 1e-12
TRUNCATION_TOL = 1e-12


class MalformedInputError(ValueError):
    """Input that cannot describe a problem at all (empty, non-finite, ...)."""


class PreconditionError(ValueError):
    """Input is well formed but outside the domain where an operation is defined."""


def _as_float_tuple(values, what: str) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except TypeError as exc:
        raise MalformedInputError(f"{what} must be a sequence of numbers") from exc
    if not out:
        raise MalformedInputError(f"{what} must not be empty")
    if not all(math.isfinite(v) for v in out):
        raise MalformedInputError(f"{what} must be finite")
    return out


# ---------------------------------------------------------------------------
# Nonlinearity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    violations: tuple[str, ...] = ()


def _horner(coeffs: Sequence[float], s: float) -> float:
    acc = 0.0
    for a in reversed(coeffs):
        acc = acc * s + a
    return acc


def _derivative(coeffs: Sequence[float]) -> tuple[float, ...]:
    if len(coeffs) <= 1:
        return (0.0,)
    return tuple(k * coeffs[k] for k in range(1, len(coeffs)))


@dataclass(frozen=True)
class Nonlinearity:
    """Polynomial flux F(s) = sum_k a_k s^k, coefficients lowest degree first."""

    coeffs: tuple[float, ...]

    def __init__(self, coeffs):
        object.__setattr__(self, "coeffs", _as_float_tuple(coeffs, "flux coefficients"))

    @classmethod
    def burgers(cls) -> "Nonlinearity":
        return cls((0.0, -1.0, 0.5))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_burgers(self) -> bool:
        c = self.coeffs + (0.0,) * max(0, 3 - len(self.coeffs))
        return c[1] == -1.0 and c[2] == 0.5 and all(a == 0.0 for a in c[3:])

    def derivative_coeffs(self, order: int) -> tuple[float, ...]:
        c = self.coeffs
        for _ in range(order):
            c = _derivative(c)
        return c

    def __call__(self, s: float, order: int = 0) -> float:
        return eval_nonlinearity(self, s, order)

    def offspring_pmf(self) -> np.ndarray:
        """pmf of Y with G_Y = F' + 1, i.e. P(Y = j) = (j+1) a_{j+1}, P(Y = 0) = 1 + a_1."""
        d = list(self.derivative_coeffs(1))
        d[0] += 1.0
        pmf = np.array(d, dtype=float)
        pmf[np.abs(pmf) < VALIDITY_TOL] = 0.0
        return pmf


def validate_nonlinearity(F: Nonlinearity | Sequence[float]) -> ValidityReport:
    if not isinstance(F, Nonlinearity):
        F = Nonlinearity(F)
    a = F.coeffs + (0.0,) * max(0, 2 - len(F.coeffs))
    if F.degree < 1:
        return ValidityReport(False, ("degree must be at least 1",))
    violations = []
    if a[1] < -1.0 - VALIDITY_TOL:
        violations.append(f"a_1 >= -1 violated (a_1 = {a[1]!r})")
    for k in range(2, len(a)):
        if a[k] < -VALIDITY_TOL:
            violations.append(f"a_{k} >= 0 violated (a_{k} = {a[k]!r})")
    moment = math.fsum(k * a[k] for k in range(1, len(a)))
    if abs(moment) > VALIDITY_TOL:
        violations.append(f"sum k a_k = 0 violated (sum = {moment!r})")
    return ValidityReport(not violations, tuple(violations))


def eval_nonlinearity(F: Nonlinearity, s: float, order: int = 0) -> float:
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    return _horner(F.derivative_coeffs(order), s)


def require_valid(F: Nonlinearity) -> None:
    report = validate_nonlinearity(F)
    if not report.valid:
        raise PreconditionError("invalid nonlinearity: " + "; ".join(report.violations))


# ---------------------------------------------------------------------------
# Initial condition and auxiliary distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExponentialIC:
    """Initial data u(0, x) = sum_{k=1}^m p_k e^{-kx}; ``p[0]`` is p_1."""

    p: tuple[float, ...]
    truncated_tail: float = 0.0

    def __init__(self, p, truncated_tail: float = 0.0):
        object.__setattr__(self, "p", _as_float_tuple(p, "initial coefficients"))
        object.__setattr__(self, "truncated_tail", float(truncated_tail))

    @classmethod
    def from_decaying(cls, coeff: Callable[[int], float], C: float, a: float,
                      tol: float = TRUNCATION_TOL, max_terms: int = 10_000) -> "ExponentialIC":
        """Truncate an infinite family with certified bound |p_k| <= C e^{-a k}.

        The kept length m is the smallest one whose tail sum_{k>m} C e^{-ak}
        (the worst case at x = 0) is below ``tol``.
        """
        if C < 0 or a <= 0:
            raise MalformedInputError("decay certificate needs C >= 0 and a > 0")
        q = math.exp(-a)
        m = 1
        while C * q ** (m + 1) / (1.0 - q) >= tol:
            m += 1
            if m > max_terms:
                raise PreconditionError("decay too slow to truncate within max_terms")
        ps = [float(coeff(k)) for k in range(1, m + 1)]
        for k, v in enumerate(ps, start=1):
            if abs(v) > C * math.exp(-a * k) * (1 + 1e-12):
                raise PreconditionError(f"|p_{k}| = {abs(v)} exceeds declared bound C e^(-a k)")
        return cls(ps, truncated_tail=C * q ** (m + 1) / (1.0 - q))

    @property
    def m(self) -> int:
        return len(self.p)

    @property
    def probabilistic(self) -> bool:
        return all(v >= 0 for v in self.p) and abs(math.fsum(self.p) - 1.0) <= VALIDITY_TOL

    def __call__(self, x: float) -> float:
        return math.fsum(pk * math.exp(-k * x) for k, pk in enumerate(self.p, start=1))

    def as_array(self, m: int | None = None) -> np.ndarray:
        arr = np.array(self.p, dtype=float)
        if m is not None and m > arr.size:
            arr = np.concatenate([arr, np.zeros(m - arr.size)])
        return arr

    def first_moment(self) -> float:
        return math.fsum(k * pk for k, pk in enumerate(self.p, start=1))


def as_ic(p) -> ExponentialIC:
    """Accept an ExponentialIC or a plain coefficient sequence."""
    return p if isinstance(p, ExponentialIC) else ExponentialIC(p)


@dataclass(frozen=True)
class AuxiliaryDist:
    """Root/child type law q_1..q_m with full support."""

    q: tuple[float, ...]

    def __init__(self, q):
        q = _as_float_tuple(q, "auxiliary distribution")
        if any(v <= 0 for v in q):
            raise PreconditionError("auxiliary distribution needs q_k > 0 for every k")
        if abs(math.fsum(q) - 1.0) > VALIDITY_TOL:
            raise PreconditionError(f"auxiliary distribution sums to {math.fsum(q)!r}, not 1")
        object.__setattr__(self, "q", q)

    @classmethod
    def default_for(cls, p: ExponentialIC, eps: float = 1e-6) -> "AuxiliaryDist":
        """q_k proportional to max(|p_k|, eps); equals p when p is a full-support pmf."""
        w = np.maximum(np.abs(p.as_array()), eps)
        w = w / math.fsum(w)
        # absorb the rounding residue so the sum is 1 to machine precision
        w[np.argmax(w)] += 1.0 - math.fsum(w)
        return cls(w)

    @property
    def m(self) -> int:
        return len(self.q)

    def as_array(self) -> np.ndarray:
        return np.array(self.q, dtype=float)

    def first_moment(self) -> float:
        return math.fsum(k * qk for k, qk in enumerate(self.q, start=1))


# ---------------------------------------------------------------------------
# Log-space weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SignedLogWeight:
    """The real number sign * exp(log_magnitude)."""

    sign: int
    log_magnitude: float = field(default=-math.inf)

    @classmethod
    def from_float(cls, v: float) -> "SignedLogWeight":
        if v == 0:
            return cls(0, -math.inf)
        return cls(1 if v > 0 else -1, math.log(abs(v)))

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)

    def __mul__(self, other: "SignedLogWeight") -> "SignedLogWeight":
        if self.sign == 0 or other.sign == 0:
            return SignedLogWeight(0)
        return SignedLogWeight(self.sign * other.sign, self.log_magnitude + other.log_magnitude)

    def __pow__(self, n: int) -> "SignedLogWeight":
        if n == 0:
            return SignedLogWeight(1, 0.0)
        if self.sign == 0:
            return SignedLogWeight(0)
        sign = -1 if (self.sign < 0 and n % 2) else 1
        return SignedLogWeight(sign, n * self.log_magnitude)

    def __add__(self, other: "SignedLogWeight") -> "SignedLogWeight":
        if self.sign == 0:
            return other
        if other.sign == 0:
            return self
        hi, lo = (self, other) if self.log_magnitude >= other.log_magnitude else (other, self)
        d = math.exp(lo.log_magnitude - hi.log_magnitude)
        if hi.sign == lo.sign:
            return SignedLogWeight(hi.sign, hi.log_magnitude + math.log1p(d))
        if d == 1.0:
            return SignedLogWeight(0)
        return SignedLogWeight(hi.sign, hi.log_magnitude + math.log1p(-d))


def signed_log_sum(signs: np.ndarray, logs: np.ndarray) -> SignedLogWeight:
    """Sum of sign_i * exp(log_i) without overflow."""
    signs = np.asarray(signs)
    logs = np.asarray(logs, dtype=float)
    mask = signs != 0
    if not np.any(mask):
        return SignedLogWeight(0)
    shift = float(np.max(logs[mask]))
    total = math.fsum((signs[mask] * np.exp(logs[mask] - shift)).tolist())
    if total == 0:
        return SignedLogWeight(0)
    return SignedLogWeight(1 if total > 0 else -1, shift + math.log(abs(total)))


# ---------------------------------------------------------------------------
# Special functions and elementary laws
# ---------------------------------------------------------------------------

_INV_E = math.exp(-1.0)


def lambert_w0(z: float) -> float:
    """Principal branch of the Lambert W function on [-1/e, inf)."""
    z = float(z)
    if math.isnan(z) or z < -_INV_E - 1e-15:
        raise ValueError(f"lambert_w0 undefined for z = {z!r} < -1/e")
    if z == 0.0:
        return 0.0
    if math.isinf(z):
        return math.inf
    q = 2.0 * (math.e * z + 1.0)
    if q <= 0.0:
        return -1.0
    if z < -0.25:
        # branch-point series in sqrt(2(ez + 1))
        r = math.sqrt(q)
        w = -1.0 + r * (1.0 + r * (-1.0 / 3.0 + r * 11.0 / 72.0))
    elif z < 3.0:
        w = math.log1p(z) * (1.0 - 0.25 * math.log1p(z) / (1.0 + math.log1p(z)))
    else:
        L1 = math.log(z)
        L2 = math.log(L1)
        w = L1 - L2 + L2 / L1
    for _ in range(64):
        ew = math.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w_new = w - step
        if w_new < -1.0:
            w_new = -1.0
        if abs(w_new - w) <= 1e-16 * (1.0 + abs(w_new)):
            w = w_new
            break
        w = w_new
    return w


def log_factorial(n):
    return gammaln(np.asarray(n, dtype=float) + 1.0)


def borel_pmf(t: float, n: int) -> float:
    """P(T = n) = e^{-tn} (tn)^{n-1} / n!, the Poisson(t) total progeny law."""
    if n < 1 or int(n) != n:
        raise ValueError("Borel support starts at n = 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = int(n)
    if t == 0:
        return 1.0 if n == 1 else 0.0
    return math.exp(-t * n + (n - 1) * math.log(t * n) - math.lgamma(n + 1))


def offspring_pgf_Y(F: Nonlinearity, s: float) -> float:
    require_valid(F)
    if abs(s) > 1 + 1e-15:
        raise PreconditionError("offspring PGF is evaluated on |s| <= 1")
    return eval_nonlinearity(F, s, 1) + 1.0


def composite_pgf_U(F: Nonlinearity, p: ExponentialIC, t: float, s: float) -> float:
    """G_U(s) = G_X(G_Y(G_Z(s))) with X ~ Poisson(t), G_Y = F' + 1, G_Z(s) = sum p_k s^k."""
    require_valid(F)
    if not p.probabilistic:
        raise PreconditionError("composite offspring law needs probabilistic initial data")
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    gz = _horner((0.0,) + p.p, s)
    return math.exp(t * eval_nonlinearity(F, gz, 1))

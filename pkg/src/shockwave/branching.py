"""
Monte Carlo for the multi-type branching process behind the series representation.

A type-k individual has offspring with PGF exp(t k F'(sum_l q_l s_l)). It is
generated in three stages: X ~ Poisson(t k) "slots", each slot carrying Y
children with G_Y = F' + 1, and each child getting a type drawn from q.
For Burgers Y = 1 and this collapses to independent Poisson(t k q_l) counts.

Trees are simulated generation by generation, keeping only the alive and
cumulative per-type counts. Many trees are advanced together as rows of an
array.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dist_core import (
    AuxiliaryDist,
    ExponentialIC,
    MalformedInputError,
    Nonlinearity,
    PreconditionError,
    as_ic,
)

DEFAULT_CAP = 10**6
BLOCK_SIZE = 1 << 16


@dataclass(frozen=True)
class ProgenyVector:
    counts: tuple[int, ...]
    exploded: bool = False
    root_type: int = 0  # zero-based


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    n_exploded: int
    seed: int


@dataclass(frozen=True)
class BranchingSpec:
    t: float
    q: AuxiliaryDist
    F: Nonlinearity = field(default_factory=Nonlinearity.burgers)
    population_cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.t < 0:
            raise PreconditionError("t must be nonnegative")
        if self.population_cap < 1:
            raise PreconditionError("population cap must be positive")

    @property
    def m(self) -> int:
        return self.q.m


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Stream for sample block ``block``; a pure function of (seed, block)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _children(spec: BranchingSpec, alive: np.ndarray, rng: np.random.Generator,
              ypmf: np.ndarray | None) -> np.ndarray:
    """Next-generation per-type counts for rows of ``alive`` (shape (n, m))."""
    ks = np.arange(1, spec.m + 1)
    W = alive @ ks
    q = spec.q.as_array()
    if ypmf is None:
        return rng.poisson(spec.t * W[:, None] * q[None, :])
    X = rng.poisson(spec.t * W)
    ys = rng.multinomial(X, ypmf) @ np.arange(ypmf.size)
    return rng.multinomial(ys, q)


def _ypmf(F: Nonlinearity) -> np.ndarray | None:
    pmf = F.offspring_pmf()
    if pmf.size >= 2 and pmf[1] == 1.0 and not np.any(np.delete(pmf, 1)):
        return None
    pmf = np.clip(pmf, 0.0, None)
    return pmf / pmf.sum()


def simulate_batch(spec: BranchingSpec, roots: np.ndarray, rng: np.random.Generator):
    """Total progeny for one tree per entry of ``roots`` (zero-based types).

    Returns (counts, exploded) with counts of shape (n, m). Exploded rows hold
    the censored totals at the moment the cap was exceeded.
    """
    roots = np.asarray(roots, dtype=np.int64)
    n, m = roots.size, spec.m
    totals = np.zeros((n, m), dtype=np.int64)
    totals[np.arange(n), roots] = 1
    exploded = np.zeros(n, dtype=bool)
    if spec.t == 0 or n == 0:
        return totals, exploded
    ypmf = _ypmf(spec.F)
    idx = np.arange(n)
    alive = totals.copy()
    cap = spec.population_cap
    while idx.size:
        kids = _children(spec, alive, rng, ypmf)
        totals[idx] += kids
        over = totals[idx].sum(axis=1) > cap
        exploded[idx[over]] = True
        keep = ~over & (kids.sum(axis=1) > 0)
        idx, alive = idx[keep], kids[keep]
    return totals, exploded


def sample_total_progeny_single(t: float, rng: np.random.Generator, cap: int = DEFAULT_CAP) -> ProgenyVector:
    """Galton-Watson total progeny with Poisson(t) offspring."""
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    alive, total = 1, 1
    while alive:
        alive = int(rng.poisson(t * alive))
        total += alive
        if total > cap:
            return ProgenyVector((total,), True, 0)
    return ProgenyVector((total,), False, 0)


def sample_total_progeny_multi(spec: BranchingSpec, root_type, rng: np.random.Generator) -> ProgenyVector:
    """One tree; ``root_type`` is a zero-based type or "random" (drawn from q)."""
    if root_type == "random":
        root_type = int(rng.choice(spec.m, p=spec.q.as_array()))
    if not 0 <= root_type < spec.m:
        raise PreconditionError(f"root type {root_type} outside 0..{spec.m - 1}")
    counts, exploded = simulate_batch(spec, np.array([root_type]), rng)
    return ProgenyVector(tuple(int(c) for c in counts[0]), bool(exploded[0]), root_type)


def stratum_sizes(size: int, q: AuxiliaryDist) -> np.ndarray:
    """Split ``size`` roots over types in proportion to q (largest remainder).

    Every type gets at least two roots when the block is big enough, so each
    stratum has a variance estimate.
    """
    qa = q.as_array()
    m = qa.size
    floor = 2 if size >= 2 * m else 0
    base = np.full(m, floor)
    rest = size - floor * m
    raw = rest * qa
    alloc = np.floor(raw).astype(np.int64)
    short = rest - int(alloc.sum())
    order = np.argsort(-(raw - alloc), kind="stable")
    alloc[order[:short]] += 1
    return base + alloc


def sample_progeny_block(spec: BranchingSpec, seed: int, block: int, size: int,
                         stratified: bool = False):
    """Roots and their trees for one reproducible block.

    Roots are drawn from q, or laid out type by type with ``stratum_sizes``
    when ``stratified``.
    """
    rng = block_rng(seed, block)
    if stratified:
        roots = np.repeat(np.arange(spec.m), stratum_sizes(size, spec.q))
    else:
        roots = rng.choice(spec.m, size=size, p=spec.q.as_array())
    counts, exploded = simulate_batch(spec, roots, rng)
    return roots, counts, exploded


def progeny_weights(counts: np.ndarray, p: ExponentialIC, q: AuxiliaryDist, x: float) -> np.ndarray:
    """prod_k ((p_k / q_k) e^{-kx})^{T_k} row by row, sign tracked separately."""
    pa = p.as_array(q.m)
    qa = q.as_array()
    ks = np.arange(1, q.m + 1)
    with np.errstate(divide="ignore"):
        logb = np.log(np.abs(pa) / qa) - ks * x
    used = counts > 0
    logw = np.where(used, counts * np.where(np.isfinite(logb), logb, 0.0), 0.0).sum(axis=1)
    zero = (used & (pa == 0)[None, :]).any(axis=1)
    neg = (counts * (pa < 0)[None, :]).sum(axis=1) % 2 == 1
    with np.errstate(over="ignore"):
        w = np.exp(logw)
    w[neg] = -w[neg]
    w[zero] = 0.0
    return w


def _worker_count(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("SHOCKWAVE_THREADS", "0") or 0) or (os.cpu_count() or 1)
    return max(1, int(workers))


def _merge(a, b):
    """Chan et al. pairwise merge of (count, mean, M2)."""
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    if n == 0:
        return a
    d = mb - ma
    return n, ma + d * nb / n, sa + sb + d * d * na * nb / n


def mc_estimate_u(t: float, x: float, p, q: AuxiliaryDist | None = None,
                  F: Nonlinearity | None = None, n_samples: int = 10**5, seed: int = 0,
                  workers: int | None = None, cap: int = DEFAULT_CAP,
                  block_size: int = BLOCK_SIZE) -> MCEstimate:
    """Monte Carlo estimate of u(t, x) = E prod_k ((p_k/q_k) e^{-kx})^{T_k}.

    The root type is stratified: each block assigns roots to types in
    proportion to q and the estimate is sum_k q_k (mean weight given root k),
    with the matching stratified standard error. This has the same
    expectation as drawing the root from q and is exact at t = 0.

    Samples are split into fixed blocks, each with its own stream, and
    reduced in block order, so the result does not depend on ``workers``.
    Exploded trees are dropped from their stratum and counted.
    """
    p = as_ic(p)
    F = F or Nonlinearity.burgers()
    q = q or AuxiliaryDist.default_for(p)
    if n_samples is None or int(n_samples) <= 0:
        raise MalformedInputError("n_samples must be a positive integer")
    if p.m > q.m:
        raise PreconditionError("auxiliary distribution must cover the support of p")
    if x < 0:
        raise PreconditionError("x must be nonnegative")
    spec = BranchingSpec(t, q, F, cap)
    n_samples = int(n_samples)
    sizes = [block_size] * (n_samples // block_size)
    if n_samples % block_size:
        sizes.append(n_samples % block_size)

    def run(b):
        roots, counts, exploded = sample_progeny_block(spec, seed, b, sizes[b], stratified=True)
        keep = ~exploded
        w = progeny_weights(counts[keep], p, q, x)
        r = roots[keep]
        stats = []
        for k in range(q.m):
            wk = w[r == k]
            if wk.size == 0:
                stats.append((0, 0.0, 0.0))
                continue
            mu = wk.mean()
            stats.append((wk.size, mu, float(((wk - mu) ** 2).sum())))
        return stats, int(exploded.sum())

    nw = min(_worker_count(workers), len(sizes))
    if nw == 1:
        parts = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(nw) as ex:
            parts = list(ex.map(run, range(len(sizes))))
    acc = [(0, 0.0, 0.0)] * q.m
    n_exploded = 0
    for stats, ne in parts:
        acc = [_merge(a, s) for a, s in zip(acc, stats)]
        n_exploded += ne
    qa = q.as_array()
    mean, var = 0.0, 0.0
    for qk, (nk, mk, m2) in zip(qa, acc):
        if nk == 0:
            return MCEstimate(math.nan, math.nan, n_samples, n_exploded, seed)
        mean += qk * mk
        if nk > 1:
            var += qk * qk * m2 / (nk - 1) / nk
    return MCEstimate(float(mean), math.sqrt(var), n_samples, n_exploded, seed)


def mean_matrix_spectral_radius(t: float, q: AuxiliaryDist, F: Nonlinearity | None = None) -> float:
    """Radius of the rank-one mean matrix t k F''(1) q_l, i.e. t F''(1) sum_k k q_k."""
    if t < 0:
        raise PreconditionError("t must be nonnegative")
    F = F or Nonlinearity.burgers()
    return t * F(1.0, 2) * q.first_moment()

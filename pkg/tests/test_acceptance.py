"""Acceptance criteria 1-10, one test each, with pinned tolerances and time limits."""
import itertools
import json
import math
import os
import subprocess
import sys

import numpy as np
from scipy.special import lambertw

from shockwave.blowup import (
    cramer_tc_bound,
    rate_functional_E,
    tc_nonprob,
    tc_prob_burgers,
    tc_prob_general,
    tc_single,
)
from shockwave.branching import mc_estimate_u
from shockwave.characteristics import (
    detect_shock,
    fv_solve,
    lambert_solution_single,
    partial_derivatives,
    solve_implicit_u,
)
from shockwave.cli import main, read_csv
from shockwave.dist_core import AuxiliaryDist, ExponentialIC, Nonlinearity
from shockwave.series import (
    TruncationPolicy,
    eval_u_series,
    formal_fixedpoint_coeffs,
    progeny_coeff,
    single_type_radius_check,
)

BURGERS = Nonlinearity.burgers()
CUBIC = Nonlinearity([0, -1, 0, 1 / 3])


def lambert_u(c, t, x):
    # scipy's Lambert W, independent of the package's own
    return -lambertw(-t * c * math.exp(-t - x)).real / t


def test_c01_single_type_exactness(criterion):
    worst_series, worst_z, worst_se = 0.0, 0.0, 0.0
    policy = TruncationPolicy(M_max=80)
    for i, (c, t, x) in enumerate(itertools.product([0.3, 0.5, 0.9], [0.2, 0.5, 0.8], [0.0, 0.5, 2.0])):
        exact = lambert_u(c, t, x)
        worst_series = max(worst_series, abs(eval_u_series(t, x, [c], policy).value - exact))
        est = mc_estimate_u(t, x, [c], AuxiliaryDist([1.0]), n_samples=10**6, seed=1000 + i)
        worst_z = max(worst_z, abs(est.mean - exact) / est.std_error)
        worst_se = max(worst_se, est.std_error)
    ok = worst_series <= 1e-8 and worst_z <= 4 and worst_se <= 2e-3
    assert criterion(1, ok, f"series err {worst_series:.1e} <= 1e-8, MC max |z| {worst_z:.2f} <= 4, "
                            f"max SE {worst_se:.1e} <= 2e-3", 60)


def test_c02_blowup_formulas(criterion):
    a = tc_single(1.0).t_c
    b = tc_prob_burgers([0.5, 0.5]).t_c
    s1 = detect_shock([1.0], BURGERS, 50).t_shock
    s2 = detect_shock([0.5, 0.5], BURGERS, 50).t_shock
    s3 = detect_shock([1.0], CUBIC, 50).t_shock
    ok = (abs(a - 1) <= 1e-12 and abs(b - 2 / 3) <= 1e-12 and abs(s1 - 1) <= 1e-6
          and abs(s2 - 2 / 3) <= 1e-6 and abs(s3 - 0.5) <= 1e-6 and tc_prob_general([1.0], CUBIC).t_c == 0.5)
    assert criterion(2, ok, f"tc_single(1)={a!r}, tc(1/2,1/2)={b:.15f}, shock {s1:.9f}/{s2:.9f}, "
                            f"cubic shock {s3:.9f}", 30)


def test_c03_lagrange_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    checked = 0
    for m in (1, 2, 3):
        for _ in range(5):
            t = float(rng.uniform(0.05, 1.5))
            q = AuxiliaryDist(rng.dirichlet(np.ones(m)))
            oracle = formal_fixedpoint_coeffs(t, q, 8)
            for (k, n), v in oracle.items():
                closed = progeny_coeff(n, k, t, q)
                if v == 0.0 or closed == 0.0:
                    err = 0.0 if v == closed else math.inf
                else:
                    err = abs(v - closed) / abs(closed)
                worst = max(worst, err)
                checked += 1
    assert criterion(3, worst <= 1e-12, f"{checked} coefficients, max rel err {worst:.1e} <= 1e-12", 60)


def test_c04_rate_functional(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(20):
        m = int(rng.integers(1, 5))
        p = rng.dirichlet(np.ones(m))
        exact = tc_prob_burgers(p).t_c
        worst = max(worst, abs(tc_nonprob(p).t_c - exact) / exact)
    mismatches = 0
    for _ in range(1000):
        t = float(rng.uniform(0.01, 4.0))
        c = float(rng.uniform(0.05, 4.0)) * (1 if rng.random() < 0.5 else -1)
        e, _ = rate_functional_E(t, [c])
        mismatches += (e > 0) != single_type_radius_check(t, c)
    ok = worst <= 1e-5 and mismatches == 0
    assert criterion(4, ok, f"tc rel err {worst:.1e} <= 1e-5 over 20 p, sign mismatches {mismatches}/1000", 60)


def expected_region(p1, p2):
    if abs(p1) + abs(p2) < 1:
        return "global_1"
    if p1 < 0 and p2 < 0:
        return "global_2"
    if p1 < 0 < p2 and p1 + p2 < 1:
        return "global_3"
    if p1 > 0 and p2 > 0 and p1 + p2 >= 1:
        return "blowup_4"
    if p1 < 0 < p2 and p1 + p2 >= 1:
        return "blowup_5"
    return "unclassified"


def test_c05_phase_diagram(criterion, tmp_path):
    out = tmp_path / "phase.csv"
    rc = main(["phase", "--p1-range=-5:5", "--p2-range=-5:5", "--step", "0.25", "--out", str(out)])
    _, rows = read_csv(out)
    wrong = sum(r["region_tag"] != expected_region(r["p1"], r["p2"]) for r in rows)
    g2 = [(r["p1"], r["p2"]) for r in rows if r["region_tag"] == "global_2"]
    shocks = sum(detect_shock(list(p), BURGERS, 50).t_shock != math.inf for p in g2)
    ok = rc == 0 and len(rows) == 41 * 41 and wrong == 0 and shocks == 0 and len(g2) > 0
    assert criterion(5, ok, f"{len(rows)} points, {wrong} mistagged, {shocks}/{len(g2)} global_2 "
                            f"points with a shock before t=50", 120)


def random_valid_flux(rng):
    d = int(rng.integers(2, 5))
    a = rng.uniform(0, 1, d - 1)          # a_2..a_d
    k = np.arange(2, d + 1)
    a *= rng.uniform(0.2, 1.0) / float(np.sum(k * a))
    return Nonlinearity([0.0, -float(np.sum(k * a)), *a])


def test_c06_cramer_bound(criterion):
    base = cramer_tc_bound(BURGERS, [1.0], AuxiliaryDist([1.0])).t_c
    rng = np.random.default_rng(11)
    worst_excess, smallest = -math.inf, math.inf
    for _ in range(20):
        F = random_valid_flux(rng)
        m = int(rng.integers(1, 4))
        ic = ExponentialIC(rng.dirichlet(np.ones(m)))
        q = AuxiliaryDist.default_for(ic)
        bound = cramer_tc_bound(F, ic, q).t_c
        exact = tc_prob_general(ic, F).t_c
        worst_excess = max(worst_excess, bound - exact)
        smallest = min(smallest, bound)
    ok = abs(base - 1) <= 1e-6 and worst_excess <= 1e-6 and smallest > 0
    assert criterion(6, ok, f"delta_1 bound {base:.9f}, max(bound - exact) {worst_excess:.1e} <= 1e-6, "
                            f"min bound {smallest:.3g} > 0", 60)


def test_c07_critical_line(criterion):
    worst = 0.0
    for p2 in np.linspace(-0.9, 5.0, 10):
        p1 = 1.0 - p2
        worst = max(worst, abs(detect_shock([p1, p2], BURGERS, 50).t_shock - 1 / (p1 + 2 * p2)))
    assert criterion(7, worst <= 1e-6, f"max |t_shock - 1/(p1+2p2)| {worst:.1e} <= 1e-6 on 10 points", 30)


def test_c08_fv_convergence(criterion):
    errs = []
    for n in (400, 800):
        f = fv_solve(BURGERS, [0.5], 10.0, n, 0.5)
        exact = np.array([lambert_solution_single(0.5, 0.5, x) for x in f.x])
        errs.append(float(np.sum(np.abs(f.u - exact)) * f.dx))
    ratio = errs[0] / errs[1]
    assert criterion(8, 1.6 <= ratio <= 2.4, f"L1 {errs[0]:.3e} -> {errs[1]:.3e}, ratio {ratio:.3f} in [1.6, 2.4]", 60)


def test_c09_pde_residual(criterion):
    rng = np.random.default_rng(3)
    worst_res, worst_fd = 0.0, 0.0
    h = 1e-5
    for F in (BURGERS, CUBIC):
        p = [0.5, 0.5]
        tc = tc_prob_general(p, F).t_c
        for _ in range(100):
            t, x = float(rng.uniform(0.01, 0.9 * tc)), float(rng.uniform(0.05, 3.0))
            ut, ux = partial_derivatives(t, x, p, F)
            u = solve_implicit_u(t, x, p, F).u
            worst_res = max(worst_res, abs(ut + F(u, 1) * ux))
            fd_t = (solve_implicit_u(t + h, x, p, F, u).u - solve_implicit_u(t - h, x, p, F, u).u) / (2 * h)
            fd_x = (solve_implicit_u(t, x + h, p, F, u).u - solve_implicit_u(t, x - h, p, F, u).u) / (2 * h)
            worst_fd = max(worst_fd, abs(fd_t - ut) / abs(ut), abs(fd_x - ux) / abs(ux))
    ok = worst_res <= 1e-9 and worst_fd <= 1e-6
    assert criterion(9, ok, f"residual {worst_res:.1e} <= 1e-9, FD rel err {worst_fd:.1e} <= 1e-6 "
                            f"(200 points, 2 fluxes)", 30)


def test_c10_determinism(criterion, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"flux": {"name": "burgers"}, "initial": [0.3, 0.7]}))
    bodies = []
    for threads in ("1", "8"):
        for run in range(2):
            out = tmp_path / f"u_{threads}_{run}.csv"
            env = dict(os.environ, SHOCKWAVE_THREADS=threads)
            subprocess.run([sys.executable, "-m", "shockwave.cli", "solve", "--config", str(cfg),
                            "--method", "mc", "--t", "0.5", "--x-grid", "0:1:3", "--samples", "300000",
                            "--seed", "42", "--out", str(out)], env=env, check=True)
            bodies.append(out.read_bytes().split(b"\n", 1)[1])
    ok = len(set(bodies)) == 1
    assert criterion(10, ok, "4 runs (SHOCKWAVE_THREADS 1 and 8, twice each) byte-identical CSV bodies")

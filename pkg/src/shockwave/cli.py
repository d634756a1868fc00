"""
shockwave command line.

    shockwave solve    --config cfg.json --method series --t 0.5 --x-grid 0:2:21
    shockwave blowup   --config cfg.json --method auto
    shockwave phase    --p1-range=-5:5 --p2-range=-5:5 --step 0.25 --out phase.csv
    shockwave simulate --config cfg.json --t 0.4 --samples 1000 --seed 7
    shockwave validate --config cfg.json --t 0.2,0.5 --x-grid 0:1:3

Exit status: 0 on success, 2 when a check fails or a run is refused, 3 for a
malformed config.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .blowup import (
    applicable_methods,
    blowup_time,
    classify_two_type,
    cramer_tc_bound,
    tc_nonprob,
    validity_guard,
)
from .branching import BranchingSpec, mc_estimate_u, sample_progeny_block, BLOCK_SIZE
from .characteristics import fv_solve, solve_by_continuation
from .dist_core import (
    AuxiliaryDist,
    ExponentialIC,
    MalformedInputError,
    Nonlinearity,
    PreconditionError,
    validate_nonlinearity,
)
from .series import (
    SeriesDivergenceError,
    eval_u_adaptive,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3
Q_FLOOR = 1e-6


class ConfigError(Exception):
    pass


class Refusal(Exception):
    pass


@dataclass(frozen=True)
class ProblemConfig:
    F: Nonlinearity
    p: ExponentialIC
    q: AuxiliaryDist
    digest: str


def _numbers(value, field: str) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{field}: expected a non-empty list of numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{field}[{i}]: expected a finite number, got {v!r}")
        out.append(float(v))
    return out


def config_digest(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_config(raw) -> ProblemConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = set(raw) - {"flux", "initial", "auxiliary", "decay"}
    if unknown:
        raise ConfigError(f"config: unknown field(s) {sorted(unknown)}")
    flux = raw.get("flux", {"name": "burgers"})
    if not isinstance(flux, dict):
        raise ConfigError("flux: expected an object")
    if "coeffs" in flux:
        F = Nonlinearity(_numbers(flux["coeffs"], "flux.coeffs"))
    elif flux.get("name") == "burgers":
        F = Nonlinearity.burgers()
    else:
        raise ConfigError('flux: expected {"name": "burgers"} or {"coeffs": [a_0, ...]}')
    report = validate_nonlinearity(F)
    if not report.valid:
        raise ConfigError("flux: " + "; ".join(report.violations))
    if "initial" not in raw:
        raise ConfigError("initial: missing")
    p = _numbers(raw["initial"], "initial")
    tail = 0.0
    if "decay" in raw:
        d = raw["decay"]
        if isinstance(d, dict):
            d = [d.get("C"), d.get("a")]
        C, a = _numbers(d, "decay")[:2] if isinstance(d, list) and len(d) == 2 else (None, None)
        if C is None or C < 0 or a <= 0:
            raise ConfigError("decay: expected (C, a) with C >= 0 and a > 0")
        m = len(p)
        tail = C * math.exp(-a * (m + 1)) / (1.0 - math.exp(-a))
    ic = ExponentialIC(p, truncated_tail=tail)
    try:
        if raw.get("auxiliary") is not None:
            q = AuxiliaryDist(_numbers(raw["auxiliary"], "auxiliary"))
            if q.m < ic.m:
                raise ConfigError("auxiliary: must have at least as many entries as initial")
        else:
            q = AuxiliaryDist.default_for(ic, Q_FLOOR)
    except (PreconditionError, MalformedInputError) as exc:
        raise ConfigError(f"auxiliary: {exc}") from None
    return ProblemConfig(F, ic, q, config_digest(raw))


def load_config(path) -> ProblemConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        return parse_config(raw)
    except (PreconditionError, MalformedInputError) as exc:
        raise ConfigError(str(exc)) from None


def parse_grid(spec: str) -> np.ndarray:
    """'a:b:n' -> n evenly spaced points; a bare number is a one-point grid."""
    try:
        parts = spec.split(":")
        if len(parts) == 1:
            return np.array([float(parts[0])])
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"bad grid {spec!r}; expected a:b:n") from None
    if n < 1:
        raise argparse.ArgumentTypeError("grid needs at least one point")
    return np.linspace(a, b, n)


def parse_range(spec: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in spec.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {spec!r}; expected a:b") from None
    return a, b


def parse_times(spec: str) -> list[float]:
    try:
        return [float(v) for v in spec.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad time list {spec!r}") from None


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(out, digest: str, seed, method: str, header: list[str], rows: list[list], started: float):
    buf = io.StringIO()
    buf.write(f"# config_sha256={digest} seed={seed} method={method} "
              f"version={__version__} wall_time_s={time.perf_counter() - started:.3f}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    text = buf.getvalue()
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def read_csv(path) -> tuple[str, list[dict]]:
    """Inverse of ``write_csv``: the manifest line and the typed rows."""
    lines = Path(path).read_text().splitlines()
    manifest = lines[0]
    rows = []
    for rec in csv.DictReader(lines[1:]):
        row = {}
        for k, v in rec.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        rows.append(row)
    return manifest, rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _series_value(cfg: ProblemConfig, t: float, x: float, mmax: int) -> float:
    return eval_u_adaptive(t, x, cfg.p, cfg.F, mmax).value


def _characteristics_value(cfg: ProblemConfig, t: float, x: float) -> float:
    sol = solve_by_continuation(t, x, cfg.p, cfg.F)
    if not sol.converged:
        raise Refusal(f"implicit solve did not converge at t={t}, x={x}")
    return sol.u


def _guard(cfg: ProblemConfig, method: str, times, force: bool):
    if force:
        return
    t_hi = max(times)
    if method == "mc":
        bound = cramer_tc_bound(cfg.F, cfg.p, cfg.q)
        if t_hi >= bound.t_c:
            raise Refusal(f"t = {t_hi} is past the Monte Carlo validity bound {bound.t_c:.12g} "
                          f"({bound.method.value}); use --force to run anyway")
    else:
        g = validity_guard(cfg.p, cfg.F, cfg.q)
        if t_hi >= g.t_c:
            raise Refusal(f"t = {t_hi} is past the validity time {g.t_c:.12g} "
                          f"({g.method.value}, {g.guaranteed.value}); use --force to run anyway")


def cmd_solve(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    times = args.t
    xs = args.x_grid
    if any(t < 0 for t in times) or np.any(xs < 0):
        raise Refusal("t and x must be nonnegative")
    _guard(cfg, args.method, times, args.force)
    rows = []
    for t in times:
        if args.method == "fv":
            L = float(xs.max()) + 4.0
            field = fv_solve(cfg.F, cfg.p, L, args.cells, t)
            us = np.interp(xs, field.x, field.u)
            rows += [[t, x, u, "fv"] for x, u in zip(xs, us)]
            continue
        for x in xs:
            if args.method == "mc":
                est = mc_estimate_u(t, x, cfg.p, cfg.q, cfg.F, args.samples, args.seed)
                rows.append([t, x, est.mean, est.std_error, "mc"])
            elif args.method == "series":
                rows.append([t, x, _series_value(cfg, t, x, args.mmax), "series"])
            else:
                rows.append([t, x, _characteristics_value(cfg, t, x), "characteristics"])
    header = ["t", "x", "u", "stderr", "method"] if args.method == "mc" else ["t", "x", "u", "method"]
    seed = args.seed if args.method == "mc" else ""
    write_csv(args.out, cfg.digest, seed, args.method, header, rows, started)
    return EXIT_OK


def cmd_blowup(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    applicable = applicable_methods(cfg.p, cfg.F)
    methods = applicable if args.method == "auto" else [args.method]
    rows = []
    for m in methods:
        try:
            r = blowup_time(cfg.p, cfg.F, m, cfg.q)
        except PreconditionError as exc:
            if args.method != "auto":
                raise Refusal(str(exc)) from None
            continue
        rows.append([m, r.t_c, r.method.value, r.guaranteed.value])
    print(f"{'method':<8} {'t_c':>22}  {'algorithm':<16} guarantee")
    for m, tc, alg, g in rows:
        print(f"{m:<8} {tc:>22.15g}  {alg:<16} {g}")
    if args.out:
        write_csv(args.out, cfg.digest, "", args.method,
                  ["method", "t_c", "algorithm", "guaranteed"], rows, started)
    return EXIT_OK


def cmd_phase(args) -> int:
    started = time.perf_counter()
    (a1, b1), (a2, b2), h = args.p1_range, args.p2_range, args.step
    if h <= 0 or not all(math.isfinite(v) for v in (a1, b1, a2, b2)):
        raise Refusal("phase sweep needs finite ranges and a positive step")
    g1 = a1 + h * np.arange(int(math.floor((b1 - a1) / h + 1e-9)) + 1)
    g2 = a2 + h * np.arange(int(math.floor((b2 - a2) / h + 1e-9)) + 1)
    rows = []
    for p1 in g1:
        for p2 in g2:
            p1r, p2r = round(float(p1), 12), round(float(p2), 12)
            tag = classify_two_type(p1r, p2r)
            tc = tc_nonprob([p1r, p2r]).t_c
            rows.append([p1r, p2r, tag.value, tc])
    digest = config_digest({"p1_range": [a1, b1], "p2_range": [a2, b2], "step": h})
    write_csv(args.out, digest, "", "phase", ["p1", "p2", "region_tag", "tc_lower_bound"], rows, started)
    return EXIT_OK


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = load_config(args.config)
    if len(args.t) != 1:
        raise Refusal("simulate takes a single --t")
    spec = BranchingSpec(args.t[0], cfg.q, cfg.F)
    rows = []
    n, b = args.samples, 0
    while n > 0:
        size = min(n, BLOCK_SIZE)
        roots, counts, exploded = sample_progeny_block(spec, args.seed, b, size)
        for r, c, e in zip(roots, counts, exploded):
            rows.append([len(rows), int(r) + 1, *map(int, c), int(e)])
        n -= size
        b += 1
    header = ["sample", "root_type"] + [f"T_{k}" for k in range(1, cfg.q.m + 1)] + ["exploded"]
    write_csv(args.out, cfg.digest, args.seed, "simulate", header, rows, started)
    return EXIT_OK


def cmd_validate(args) -> int:
    """Characteristics against series (1e-8) and Monte Carlo (4 SE) on a grid."""
    started = time.perf_counter()
    cfg = load_config(args.config)
    times = args.t
    g = validity_guard(cfg.p, cfg.F, cfg.q)
    if max(times) >= g.t_c and not args.force:
        raise Refusal(f"t = {max(times)} is past the validity time {g.t_c:.12g}; refusing to validate")
    series_ok = cfg.F.is_burgers or cfg.p.probabilistic
    rows = []
    failures = 0
    for t in times:
        for x in args.x_grid:
            u_ch = _characteristics_value(cfg, t, x)
            try:
                u_se = eval_u_adaptive(t, x, cfg.p, cfg.F, args.mmax).value if series_ok else math.nan
            except SeriesDivergenceError as exc:
                print(f"finding: series diverges at t={t}, x={x} inside the claimed-valid region ({exc})")
                u_se = math.nan
                failures += 1
            est = mc_estimate_u(t, x, cfg.p, cfg.q, cfg.F, args.samples, args.seed)
            ok_se = (not series_ok) or abs(u_ch - u_se) <= 1e-8
            ok_mc = abs(u_ch - est.mean) <= 4 * est.std_error + 1e-12
            ok = ok_se and ok_mc
            failures += not ok
            rows.append([t, x, u_ch, u_se, est.mean, est.std_error, "pass" if ok else "fail"])
    header = ["t", "x", "u_characteristics", "u_series", "u_mc", "mc_stderr", "status"]
    write_csv(args.out, cfg.digest, args.seed, "validate", header, rows, started)
    passed = sum(r[-1] == "pass" for r in rows)
    print(f"validate: {passed}/{len(rows)} points agree", file=sys.stderr)
    return EXIT_OK if failures == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shockwave", description=__doc__.split("\n\n")[0].strip())
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, method_choices=None, default=None):
        p.add_argument("--config", required=True)
        if method_choices:
            p.add_argument("--method", choices=method_choices, default=default)
        p.add_argument("--out", default=None, help="output CSV (default stdout)")
        p.add_argument("--force", action="store_true", help="skip the validity guard")

    s = sub.add_parser("solve", help="evaluate u(t, x) on a grid")
    common(s, ["mc", "series", "characteristics", "fv"], "series")
    s.add_argument("--t", type=parse_times, required=True, help="time or comma-separated times")
    s.add_argument("--x-grid", type=parse_grid, default=parse_grid("0:2:5"))
    s.add_argument("--samples", type=int, default=10**5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mmax", type=int, default=80, help="starting shell count; doubled until the tail is below 1e-10")
    s.add_argument("--cells", type=int, default=2000, help="finite-volume cells")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("blowup", help="blow-up time by one or all methods")
    common(b, ["auto", "exact", "rate", "cramer", "shock"], "auto")
    b.set_defaults(func=cmd_blowup)

    ph = sub.add_parser("phase", help="two-type phase diagram sweep")
    ph.add_argument("--p1-range", type=parse_range, default=(-5.0, 5.0))
    ph.add_argument("--p2-range", type=parse_range, default=(-5.0, 5.0))
    ph.add_argument("--step", type=float, default=0.25)
    ph.add_argument("--out", default=None)
    ph.set_defaults(func=cmd_phase)

    sm = sub.add_parser("simulate", help="raw total-progeny samples")
    common(sm)
    sm.add_argument("--t", type=parse_times, required=True)
    sm.add_argument("--samples", type=int, default=1000)
    sm.add_argument("--seed", type=int, default=0)
    sm.set_defaults(func=cmd_simulate)

    v = sub.add_parser("validate", help="cross-check characteristics, series and Monte Carlo")
    common(v)
    v.add_argument("--t", type=parse_times, default=parse_times("0.2,0.5"))
    v.add_argument("--x-grid", type=parse_grid, default=parse_grid("0:1:3"))
    v.add_argument("--samples", type=int, default=2 * 10**5)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--mmax", type=int, default=80)
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "samples", 1) is not None and getattr(args, "samples", 1) <= 0:
        print("error: --samples must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Refusal as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (PreconditionError, SeriesDivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

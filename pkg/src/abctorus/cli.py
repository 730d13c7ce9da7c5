"""``abc``: one command line for parameters, property suites, diagnostics and figures."""

from __future__ import annotations

import argparse
import csv
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analytic import AnalyticShear, Scheme, approximate_profile, distance_report, periodic_rescale
from .config import Arithmetic, RunConfig, load_config, norm_inputs
from .conjugation import AssembledStage, build_stages
from .diagnostics import (COMPOSITION_CONSTANT, distribution_constants, mixing_correlation,
                          norm_estimate, stage_mixing_sets)
from .errors import AbcError
from .maps import Identity, projectivize_batch
from .partitions import Geometry, Level, cells, cells_csv_rows
from .persist import RunManifest, jsonl
from .render import svg
from .scheduler import check_conditions, next_alpha
from . import suites

COMMANDS = ("params", "verify", "distribute", "mixing", "approx", "orbit", "render")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="abc",
        description="Finite-stage constructions of conjugated rotations on the torus: "
                    "parameters, property suites, diagnostics and figures.",
        epilog="Exit codes: 0 success, 2 configuration error, 3 assertion failure, "
               "4 numeric-mode error.  ABC_WORKERS overrides the worker count.")
    p.add_argument("--version", action="version", version=f"abc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="<subcommand>")
    helps = {
        "params": "derive stage parameters and growth-condition verdicts",
        "verify": "run property suites and exit 0 iff all pass",
        "distribute": "distribution constants of the mixing map on partition elements",
        "mixing": "correlations of framed sets under the mixing iterate",
        "approx": "trigonometric approximation of the shear profile",
        "orbit": "iterate a stage map with its projectivized derivative",
        "render": "SVG of partition boxes or an orbit",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--seed", type=int, help="64-bit seed (overrides the config)")
        s.add_argument("--samples", type=int, help="sample budget for this command")
        s.add_argument("--stage", type=int, default=None, help="stage number n (default: first)")
        s.add_argument("--suite", default="ALL",
                       help="verify: ALL, AREA, COMMUTE, ISOMETRY, PARTITION, SHIFTLAW or JACOBIAN")
        s.add_argument("--degree", type=int, help="approx: a single degree instead of the sweep")
        s.add_argument("--what", default=None,
                       help="distribute: Phi|phi|identity; orbit: f|h|phi|g; "
                            "render: partition:<level> or orbit:<csv path>")
    return p


class Context:
    def __init__(self, args, cfg: RunConfig):
        self.args, self.cfg = args, cfg
        self.seed = cfg.seed if args.seed is None else args.seed
        if not (0 <= self.seed < 2**64):
            raise AbcError("CONFIG", "seed must be a 64-bit unsigned integer")
        if args.samples is not None and args.samples < 1:
            raise AbcError("CONFIG", "--samples must be positive")
        self.out = Path(args.out or cfg.out)
        self.stages = cfg.stage_params()
        self._assembled: Optional[list[AssembledStage]] = None
        self.stage_index()

    def budget(self, name: str) -> int:
        if self.args.samples is not None:
            return self.args.samples
        return getattr(self.cfg.samples, name)

    @property
    def assembled(self) -> list[AssembledStage]:
        if self._assembled is None:
            self._assembled = build_stages(self.stages, self.cfg.r1, self.cfg.r2)
        return self._assembled

    def stage_index(self) -> int:
        n = self.args.stage
        if n is None:
            return 0
        for i, st in enumerate(self.stages):
            if st.n == n:
                return i
        raise AbcError("USAGE", f"no stage with n={n} in the config")

    def stage(self):
        return self.stages[self.stage_index()]

    def assembled_stage(self) -> AssembledStage:
        return self.assembled[self.stage_index()]


# ---------------------------------------------------------------- subcommands

def _fill_estimates(ctx: Context) -> tuple[dict, dict]:
    """Config estimates, with first-stage gaps filled from frozen or measured values."""
    est = norm_inputs(ctx.cfg)
    source = {}
    for st in ctx.stages:
        d = est.setdefault(st.n, {})
        r = int(d.get("r", st.n))
        r_next = int(d.get("r_next", r + 1))
        src = {}
        if "C_hat" not in d:
            d["C_hat"] = Fraction(COMPOSITION_CONSTANT[min(max(r, 1), 3)]).limit_denominator(1000)
            src["C_hat"] = "frozen composition constant"
        if "H_norm" not in d and st.n == 1:
            from .conjugation import ShearMap
            rep = norm_estimate(ShearMap.from_stage(st), min(r_next, 3))
            d["H_norm"] = rep.estimate
            src["H_norm"] = f"grid estimate of the shear factor at order {min(r_next, 3)}"
        source[st.n] = src
    return est, source


def cmd_params(ctx: Context, man: RunManifest) -> int:
    est, source = _fill_estimates(ctx)
    reports = check_conditions(ctx.stages, est)
    rows = []
    for st, rep in zip(ctx.stages, reports):
        alpha, q_next, p_next = next_alpha(st)
        row = [st.n, st.k, st.l, st.q, st.p, st.sigma, st.shear_b, alpha, q_next]
        row += [e.satisfied for e in rep.entries]
        rows.append(row)
    names = [e.name for e in reports[0].entries]
    man.write_json("params.json", {
        "stages": [st.to_json() for st in ctx.stages],
        "conditions": [r.to_json() for r in reports],
        "estimate_sources": {str(k): v for k, v in source.items()},
    })
    man.write_csv("params.csv", ["n", "k", "l", "q", "p", "sigma", "shear_b", "alpha_next",
                                 "q_next"] + names, rows)
    for rep in reports:
        verdicts = ", ".join(f"{e.name}={'true' if e.satisfied else 'false'}" for e in rep.entries)
        print(f"stage {rep.n}: {verdicts}")
    return 0


def cmd_verify(ctx: Context, man: RunManifest) -> int:
    want = ctx.args.suite.upper()
    names = suites.SUITES if want == "ALL" else (want,)
    if any(n not in suites.SUITES for n in names):
        raise AbcError("USAGE", f"unknown suite {ctx.args.suite!r}")
    S = ctx.assembled_stage()
    tol = ctx.cfg.tolerances
    seed = ctx.seed
    results = []
    for name in names:
        if name == "AREA":
            res = suites.area_suite(S, ctx.budget("area"), tol.area, seed)
        elif name == "COMMUTE":
            res = suites.commute_suite(S, ctx.budget("commute"), tol.commute, seed)
        elif name == "ISOMETRY":
            res = suites.isometry_suite(S, ctx.cfg.samples.isometry_cells,
                                        ctx.cfg.samples.isometry_samples,
                                        ctx.cfg.samples.isometry_angles, tol.isometry, seed)
        elif name == "PARTITION":
            res = suites.partition_suite(S)
        elif name == "SHIFTLAW":
            res = suites.shiftlaw_suite(S, ctx.budget("shiftlaw"), seed)
        else:
            res = suites.jacobian_suite(S, ctx.budget("jacobian"), tol.jacobian, tol.fd_step, seed)
        results.append(res)
        print(f"{name}: {'PASS' if res.passed else 'FAIL'} ({len(res.checks)} checks)")
    ok = all(r.passed for r in results)
    man.write_json(f"verify_{want.lower()}.json",
                   {"stage": S.stage.n, "seed": seed, "passed": ok, "suites": results})
    if not ok:
        bad = next(r for r in results if not r.passed)
        print(f"first failure in {bad.suite}: {bad.first_failure()}", file=sys.stderr)
        return 3
    return 0


def _default_elements(ctx: Context) -> list[tuple]:
    if ctx.cfg.elements:
        return [tuple(e) for e in ctx.cfg.elements]
    g = Geometry(ctx.stage())
    mid = g.K5 // 2
    return [(0, mid, 0), (1, mid, 0)]


def cmd_distribute(ctx: Context, man: RunManifest) -> int:
    S = ctx.assembled_stage()
    what = (ctx.args.what or "Phi")
    maps = {"Phi": S.Phi, "phi": S.phi, "identity": Identity()}
    if what not in maps:
        raise AbcError("USAGE", f"distribute target must be one of {sorted(maps)}")
    reports = [distribution_constants(S.stage, maps[what], e, ctx.budget("distribute"),
                                      ctx.seed, which="phi" if what == "phi" else "Phi")
               for e in _default_elements(ctx)]
    man.write_json(f"distribute_{what}.json", {"stage": S.stage.n, "map": what,
                                               "reports": reports})
    man.write_text(f"distribute_{what}.jsonl", jsonl(reports))
    for r in reports:
        print(f"element {r.element}: gamma={r.gamma:.4g} delta={r.delta:.4g} "
              f"eps1={r.eps1:.4g} eps2={r.eps2:.4g} loss={r.loss_budget:.4g} "
              f"satisfied={r.satisfied_within_budget}")
    return 0


def cmd_mixing(ctx: Context, man: RunManifest) -> int:
    S = ctx.assembled_stage()
    k = S.stage.k
    squares = [tuple(s) for s in ctx.cfg.squares] or \
        [(0, 0, Fraction(1, 2 * k), 0), (Fraction(1, 2), Fraction(1, 4), Fraction(1, 2 * k), k - 1)]
    gs, cs = stage_mixing_sets(S, _default_elements(ctx), squares)
    rep = mixing_correlation(S.f, S.mixing.m, gs, cs, ctx.budget("mixing"), ctx.seed,
                             stage=S, cap=ctx.cfg.mixing_cap)
    man.write_json("mixing.json", {"stage": S.stage.n, "m": S.mixing.m,
                                   "frak_a": S.mixing.frak_a, "report": rep})
    man.write_text("mixing.jsonl", jsonl(rep.pairs))
    for p in rep.pairs:
        print(f"{p['gamma']} vs {p['square']}: corr={p['correlation']:.4g} +- {p['se']:.2g}")
    print(f"loss budget {rep.loss_budget:.4g}")
    return 0


def cmd_approx(ctx: Context, man: RunManifest) -> int:
    from .conjugation import ShearMap
    st = ctx.stage()
    g = ShearMap.from_stage(st)
    degrees = [ctx.args.degree] if ctx.args.degree is not None else list(ctx.cfg.degrees)
    out, coef_rows = [], []
    for scheme in (Scheme.FEJER, Scheme.TRUNCATION):
        for N in degrees:
            tp = approximate_profile(g.profile, N, scheme)
            an = AnalyticShear(tp, st.q)
            rep = distance_report(g, an, eps_target=st.approx_eps)
            d = rep.to_json()
            d["scheme"] = scheme.value
            d["rescaled_commutes"] = AnalyticShear(periodic_rescale(tp, st.q), st.q)\
                .commutes_with_period()
            out.append(d)
            coef_rows.extend([scheme.value, N, m, float(c), float(sn)]
                             for m, (c, sn) in enumerate(zip(tp.c, tp.s)))
            print(f"{scheme.value} N={N}: d0={rep.d0:.6g} d1={rep.d1:.6g} d2={rep.d2:.6g}")
    man.write_json("approx.json", {"stage": st.n, "reports": out})
    man.write_csv("approx_coefficients.csv", ["scheme", "degree", "m", "c_m", "s_m"], coef_rows)
    return 0


def cmd_orbit(ctx: Context, man: RunManifest) -> int:
    S = ctx.assembled_stage()
    what = ctx.args.what or "f"
    maps = {"f": S.f, "h": S.h, "phi": S.phi, "g": S.g}
    if what not in maps:
        raise AbcError("USAGE", f"orbit map must be one of {sorted(maps)}")
    mp = maps[what]
    th, r, t = ctx.cfg.orbit_start
    rows = [[0, repr(float(th)), repr(float(r)), repr(float(t)), "GOOD"]]
    x, y, z = np.array([th]), np.array([r]), np.array([t])
    for i in range(1, ctx.budget("orbit") + 1):
        b = mp.eval_batch(x, y)
        z = projectivize_batch(b.deriv, z)
        x, y = b.theta, b.r
        rows.append([i, repr(float(x[0])), repr(float(y[0])), repr(float(z[0])),
                     "GOOD" if b.good[0] else "TRANSITION"])
    man.write_csv(f"orbit_{what}.csv", ["iterate", "theta", "r", "t", "tag"], rows)
    print(f"{len(rows) - 1} iterates of {what} written")
    return 0


def cmd_render(ctx: Context, man: RunManifest) -> int:
    what = ctx.args.what
    if not what:
        raise AbcError("USAGE", "render needs --what partition:<level> or orbit:<csv path>")
    kind, _, arg = what.partition(":")
    if kind == "partition":
        try:
            level = Level(arg.upper())
        except ValueError:
            raise AbcError("USAGE", f"unknown level {arg!r}")
        st = ctx.stage()
        count = Geometry(st).count(level)
        if count > 100_000:
            raise AbcError("USAGE", f"{count} boxes exceed the limit of 100000")
        mode = "exact" if ctx.cfg.float_or_exact == Arithmetic.EXACT else "float"
        boxes = [(b.theta_lo, b.theta_hi, b.r_lo, b.r_hi) for _, b in cells(st, level, mode)]
        man.write_text(f"partition_{level.value.lower()}.svg",
                       svg(boxes, title=f"{level.value} n={st.n} k={st.k} q={st.q}"))
        man.write_csv(f"partition_{level.value.lower()}.csv",
                      ["level", "digits", "theta_lo", "theta_hi", "r_lo", "r_hi"],
                      cells_csv_rows(st, level, mode))
        print(f"{len(boxes)} boxes rendered")
    elif kind == "orbit":
        path = Path(arg)
        try:
            with path.open() as fh:
                pts = [(float(row["theta"]), float(row["r"])) for row in csv.DictReader(fh)]
        except (OSError, KeyError, ValueError) as exc:
            raise AbcError("USAGE", f"cannot read orbit file {path}: {exc}")
        man.write_text(f"orbit_{path.stem}.svg", svg((), pts, title=path.stem))
        print(f"{len(pts)} points rendered")
    else:
        raise AbcError("USAGE", "render target must be partition:<level> or orbit:<csv path>")
    return 0


_HANDLERS = {"params": cmd_params, "verify": cmd_verify, "distribute": cmd_distribute,
             "mixing": cmd_mixing, "approx": cmd_approx, "orbit": cmd_orbit,
             "render": cmd_render}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        ctx = Context(args, cfg)
        ctx.out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(cfg.digest(), args.command, ctx.out)
        t0 = time.perf_counter()
        code = _HANDLERS[args.command](ctx, man)
        man.wall_clock[args.command] = round(time.perf_counter() - t0, 3)
        man.finish()
        return code
    except AbcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

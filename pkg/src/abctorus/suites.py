"""Property suites behind ``abc verify``; each returns a JSON-ready result."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .conjugation import AssembledStage, ShearMap, StepProfile, TypeBMap
from .diagnostics import deviation, shift_law_check
from .errors import AbcError
from .maps import Compose, Rotation, circle_dist, det2, jacobian_fd_batch
from .partitions import CellIndex, Level, coverage, sample_zeta_points
from .rng import chunk_rng

SUITES = ("AREA", "COMMUTE", "ISOMETRY", "PARTITION", "SHIFTLAW", "JACOBIAN")


@dataclass
class SuiteResult:
    suite: str
    passed: bool
    checks: list = field(default_factory=list)

    def first_failure(self):
        for c in self.checks:
            if not c["passed"]:
                return c
        return None

    def to_json(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "checks": self.checks}


def _result(name, checks) -> SuiteResult:
    return SuiteResult(name, all(c["passed"] for c in checks), checks)


def _uniform(seed, size):
    rng = chunk_rng(seed, 0)
    return rng.random(size), rng.random(size)


def area_suite(S: AssembledStage, samples: int, tol: float, seed: int) -> SuiteResult:
    """|det J - 1|: everywhere for the shear and the block twist, on GOOD points otherwise."""
    th, r = _uniform(seed, samples)
    checks = []
    for label, mp, everywhere in (("g", S.g, True), ("i", S.type_b, True),
                                  ("phi", S.phi, False), ("f", S.f, False)):
        out = mp.eval_batch(th, r)
        mask = np.ones(th.size, dtype=bool) if everywhere else out.good
        err = float(np.max(np.abs(det2(out.deriv[mask]) - 1))) if mask.any() else float("nan")
        checks.append({"map": label, "samples": samples, "used": int(mask.sum()),
                       "max_abs_det_minus_1": err, "tolerance": tol,
                       "passed": bool(mask.any()) and err <= tol})
    return _result("AREA", checks)


def commute_suite(S: AssembledStage, samples: int, tol: float, seed: int) -> SuiteResult:
    """The shear commutes with the rotation by 1/q: images and derivatives agree."""
    th, r = _uniform(seed, samples)
    R = Rotation(Fraction(1, S.stage.q))
    a = Compose(S.g, R).eval_batch(th, r)
    b = Compose(R, S.g).eval_batch(th, r)
    pos = float(max(np.max(circle_dist(a.theta, b.theta)), np.max(circle_dist(a.r, b.r))))
    der = float(np.max(np.abs(a.deriv - b.deriv)))
    return _result("COMMUTE", [{"map": "g o R vs R o g", "samples": samples,
                                "max_position_discrepancy": pos,
                                "max_derivative_discrepancy": der, "tolerance": tol,
                                "passed": pos <= tol and der <= tol}])


def isometry_suite(S: AssembledStage, cells: int, samples: int, angles: int, tol: float,
                   seed: int) -> SuiteResult:
    """Deviation from isometry of h = g o phi on random ZETA cells where h is GOOD."""
    rng = chunk_rng(seed, 1)
    st = S.stage
    worst, worst_dirs, used, tried = 0.0, 0.0, 0, 0
    while used < cells and tried < 50 * cells:
        tried += 1
        d = sample_zeta_points(st, rng, 1)
        idx = CellIndex(Level.ZETA, *(int(d[f][0]) for f in ("u0", "u1", "u2", "u3", "u4",
                                                           "v0", "v1", "v2")))
        try:
            rep = deviation(S.h, st, idx, samples, angles, seed=seed + tried)
        except AbcError as exc:
            if exc.code == "NO_GOOD_SAMPLES":
                continue
            raise
        used += 1
        worst = max(worst, rep.dev)
        worst_dirs = max(worst_dirs, rep.dev_sampled_directions)
    return _result("ISOMETRY", [{"map": "h", "cells": used, "cells_tried": tried,
                                 "samples_per_cell": samples, "angles": angles,
                                 "max_dev": worst, "max_dev_sampled_directions": worst_dirs,
                                 "tolerance": tol, "passed": used == cells and worst <= tol}])


def partition_suite(S: AssembledStage) -> SuiteResult:
    checks = []
    for level in Level:
        rep = coverage(S.stage, level)
        d = rep.to_json()
        d["passed"] = rep.satisfied
        checks.append(d)
    return _result("PARTITION", checks)


def shiftlaw_suite(S: AssembledStage, samples: int, seed: int) -> SuiteResult:
    checks = []
    for which in ("phi", "Phi"):
        rep = shift_law_check(S, which, samples, seed)
        d = rep.to_json()
        d["passed"] = rep.good > 0 and rep.exact == rep.good
        checks.append(d)
    return _result("SHIFTLAW", checks)


def _fd_collect(mp, want: int, h: float, seed: int, collar_free: bool = True):
    """Errors on ``want`` usable uniform points (or fewer if the map rarely allows it)."""
    errs, got, chunk = [], 0, 0
    while got < want and chunk < 200:
        rng = chunk_rng(seed, chunk)
        chunk += 1
        th, r = rng.random(4 * want), rng.random(4 * want)
        e, ok = jacobian_fd_batch(mp, th, r, h, collar_free)
        e = e[ok][: want - got]
        errs.append(e)
        got += e.size
    e = np.concatenate(errs) if errs else np.zeros(0)
    return e


def jacobian_suite(S: AssembledStage, samples: int, tol: float, h: float,
                   seed: int) -> SuiteResult:
    """Closed-form derivatives against central differences.

    Primitives are probed on collar-free stencils, with steps below the narrowest
    transition so that no stencil can jump across one.  The smooth transition regions
    are checked on coarse block twists and shears where a stencil resolves them.
    """
    fine = 1e-8  # cells of the digit permutation are a few 1e-6 wide
    cases = [
        ("g", S.g, min(h, S.g.min_width / 8), True),
        ("i", S.type_b, min(h, S.type_b.min_width / 8), True),
        ("phiA", S.type_a, fine, True),
        ("phi", S.phi, fine, True),
        ("R_alpha", Rotation(S.alpha_next), h, True),
        ("i_transition[4,16]", TypeBMap(4, 16, S.stage.k), 1e-7, False),
        ("g_transition[4,1,1/8]", ShearMap(StepProfile(4, 1, Fraction(1, 8)), 1), 1e-7, False),
    ]
    checks = []
    for j, (label, mp, step, cf) in enumerate(cases):
        e = _fd_collect(mp, samples, step, seed + 17 * j, cf)
        worst = float(e.max()) if e.size else float("nan")
        checks.append({"map": label, "samples": int(e.size), "step": step,
                       "collar_free": cf, "max_rel_error": worst, "tolerance": tol,
                       "passed": e.size == samples and worst <= tol})
    return _result("JACOBIAN", checks)

"""Measurements on constructed stages: isometry defect, metrics, norms, distribution, mixing.

All Monte Carlo estimates draw from :mod:`abctorus.rng`, so every report is a
pure function of (inputs, seed, sample count).  Points where a map is not in its
good domain are never used for exact claims; their mass is reported as a loss
budget next to each estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .conjugation import AssembledStage, ShearMap, StepProfile, shift_law_expected
from .errors import AbcError
from .maps import Compose, Identity, Rotation, TorusMap, TorusPoint, projectivize_batch
from .partitions import (CellIndex, Geometry, Level, cell_box, locate_batch,
                         sample_zeta_points)
from .rng import run_chunked, worker_count
from .scheduler import StageParams, fmt_rational

MIN_STRATUM = 100
DEFAULT_CAP = 0.2
DYADIC_DEPTH = 6
FIBER_TOL = 1e-9

# Constant of the composition-norm inequality |||F o G|||_r <= C |||F|||_r^r |||G|||_r^r.
# Grid fits on pairs of shears, block twists and rotations gave maxima 1.003 (r=1)
# and below 1e-4 (r=2, 3); rigid pairs force C >= 1.  Frozen with headroom.
COMPOSITION_CONSTANT = {1: 1.5, 2: 1.5, 3: 1.5}
# |||g|||_r <= c q^r with c fitted on the toy shear (n=1, k=2, l=4, q=2, sigma=3/8);
# the maxima sit on the wrap collar and are grid-stable to 0.1%
SHEAR_NORM_CONSTANT = {1: 3.2e4, 2: 2.6e9, 3: 4.8e14}


def _num(x):
    return fmt_rational(x) if isinstance(x, (Fraction, int)) else x


# ---------------------------------------------------------------- deviation

def matrix_deviation(deriv: np.ndarray) -> np.ndarray:
    """``max_{|v|=1} |log |J v||`` per matrix, from the singular values."""
    sv = np.linalg.svd(np.asarray(deriv, dtype=float), compute_uv=False)
    return np.maximum(np.abs(np.log(sv[..., 0])), np.abs(np.log(sv[..., -1])))


@dataclass
class DeviationReport:
    cell: Optional[CellIndex]
    dev: float
    dev_sampled_directions: float
    samples: int
    good_fraction: float

    def to_json(self) -> dict:
        return {"cell": None if self.cell is None else list(self.cell.digits()),
                "dev": self.dev, "dev_sampled_directions": self.dev_sampled_directions,
                "samples": self.samples, "good_fraction": self.good_fraction}


def deviation_at(expr: TorusMap, theta, r, angles: int = 64, cell=None) -> DeviationReport:
    out = expr.eval_batch(theta, r)
    n = out.good.size
    if not np.any(out.good):
        raise AbcError("NO_GOOD_SAMPLES", "no sample point is in the good domain")
    J = out.deriv[out.good]
    dev = float(np.max(matrix_deviation(J)))
    ang = np.pi * np.arange(angles) / angles
    v = np.stack([np.cos(ang), np.sin(ang)])
    norms = np.linalg.norm(np.einsum("nij,jk->nik", J, v), axis=1)
    dev_dirs = float(np.max(np.abs(np.log(norms))))
    return DeviationReport(cell, dev, dev_dirs, n, float(out.good.mean()))


def deviation(expr: TorusMap, stage: StageParams, cell: CellIndex, samples: int = 100,
              angles: int = 64, seed: int = 0) -> DeviationReport:
    """Isometry defect of ``expr`` over uniform samples of one partition cell.

    ``dev`` is the exact sup over unit directions (largest |log singular value|);
    ``dev_sampled_directions`` uses ``angles`` equally spaced directions.
    """
    box = cell_box(stage, cell)
    rng = np.random.default_rng(np.random.Philox(key=seed))
    th = float(box.theta_lo) + float(box.theta_hi - box.theta_lo) * rng.random(samples)
    rr = float(box.r_lo) + float(box.r_hi - box.r_lo) * rng.random(samples)
    return deviation_at(expr, th, rr, angles, cell)


def pullback_metric(H: TorusMap, p: TorusPoint) -> np.ndarray:
    """Metric ``J^T J`` with ``J`` the derivative of ``H^{-1}`` at ``p``."""
    out = H.inverse().eval_batch([float(p.theta)], [float(p.r)])
    if not out.good[0]:
        raise AbcError("TRANSITION_AT_POINT", f"inverse not in its good domain at {p}")
    J = out.deriv[0]
    return J.T @ J


# ---------------------------------------------------------------- framed sets

class FramedSet:
    """A set ``(F, dF)(S x T)`` for a base box S, a fiber interval T and a frame map F.

    Its fiber-uniform measure is ``area(S) * length(T)`` (fiber normalized to 1).
    Membership pulls a point back through the frame inverse; points where the
    inverse is not GOOD are reported separately.
    """

    def __init__(self, frame: TorusMap, box, fiber=(0, 1), name: str = "set"):
        self.frame = frame
        self.frame_inv = frame.inverse()
        self.box = tuple(box)
        self.fiber = tuple(fiber)
        self.name = name

    @property
    def base_measure(self):
        th0, th1, r0, r1 = self.box
        return (th1 - th0) * (r1 - r0)

    @property
    def measure(self):
        return self.base_measure * (self.fiber[1] - self.fiber[0])

    def sample_base(self, rng, size):
        th0, th1, r0, r1 = (float(x) for x in self.box)
        return th0 + (th1 - th0) * rng.random(size), r0 + (r1 - r0) * rng.random(size), {}

    def in_base(self, th, r):
        th0, th1, r0, r1 = (float(x) for x in self.box)
        return (th >= th0) & (th < th1) & (r >= r0) & (r < r1)

    def in_fiber(self, t):
        t0, t1 = float(self.fiber[0]), float(self.fiber[1])
        if t1 - t0 >= 1.0:
            return np.ones(np.shape(t), dtype=bool)
        return (t >= t0) & (t < t1)

    def sample(self, rng, size):
        th, r, labels = self.sample_base(rng, size)
        t0, t1 = float(self.fiber[0]), float(self.fiber[1])
        t = t0 + (t1 - t0) * rng.random(size)
        out = self.frame.eval_batch(th, r)
        tt = projectivize_batch(out.deriv, t)
        labels = dict(labels)
        labels["t_base"] = t
        return out.theta, out.r, tt, out.good, labels

    def pullback(self, th, r, t):
        back = self.frame_inv.eval_batch(th, r)
        return back.theta, back.r, projectivize_batch(back.deriv, t), back.good

    def contains(self, th, r, t):
        bth, br, bt, good = self.pullback(th, r, t)
        return self.in_base(bth, br) & self.in_fiber(bt), good


class HatElementSet(FramedSet):
    """Framed image of one HAT_ETA element ``(u0, v0, j)``: union of ZETA cells times T_j."""

    def __init__(self, stage: StageParams, frame: TorusMap, u0: int, v0: int, j: int):
        self.stage, self.geom = stage, Geometry(stage)
        self.u0, self.v0, self.j = u0, v0, j
        k = stage.k
        box = cell_box(stage, CellIndex(Level.HAT_ETA, u0, v0=v0, j=j))
        super().__init__(frame, (box.theta_lo, box.theta_hi, box.r_lo, box.r_hi),
                         (Fraction(j, k), Fraction(j + 1, k)), f"hat({u0},{v0},{j})")
        # the element measure already carries the fiber length 1/k
        self._exact_base = box.measure * k

    @property
    def base_measure(self):
        return self._exact_base

    def sample_base(self, rng, size):
        d = sample_zeta_points(self.stage, rng, size, u0=self.u0, v0=self.v0)
        return d["theta"], d["r"], {"u0": d["u0"], "u1": d["u1"]}

    def in_base(self, th, r):
        loc = locate_batch(self.stage, Level.ZETA, th, r)
        return loc["valid"] & (loc["u0"] == self.u0) & (loc["v0"] == self.v0)

    def in_fiber(self, t):
        k = self.stage.k
        return (t >= self.j / k - FIBER_TOL) & (t <= (self.j + 1) / k + FIBER_TOL)


@dataclass
class MeasureEstimate:
    value: float
    se: float
    transition_fraction: float
    samples: int


def estimate_measure(s: FramedSet, samples: int, seed: int = 0,
                     workers: Optional[int] = None) -> MeasureEstimate:
    """Monte Carlo fiber-uniform measure of ``s`` from uniform (x, t) samples."""

    def chunk(rng, size, _):
        th, r, t = rng.random(size), rng.random(size), rng.random(size)
        inside, good = s.contains(th, r, t)
        return int(np.sum(inside & good)), int(np.sum(~good))

    parts = run_chunked(samples, seed, chunk, workers)
    hits = sum(p[0] for p in parts)
    bad = sum(p[1] for p in parts)
    p = hits / samples
    return MeasureEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / samples), bad / samples, samples)


# ---------------------------------------------------------------- distribution

@dataclass
class DistributionReport:
    element: tuple
    n: int
    gamma: object
    delta: object
    eps1: object
    eps2: object
    targets: tuple
    loss_budget: float
    loss_se: float = 0.0
    transition_mass: float = 0.0
    coverage_gap: float = 0.0
    gamma_dilation: float = 0.0
    satisfied_within_budget: bool = False
    items: dict = field(default_factory=dict)
    samples: int = 0
    seed: int = 0
    workers: int = 1
    good_per_stratum: tuple = ()
    note: str = ""

    def to_json(self) -> dict:
        return {"element": list(self.element), "n": self.n,
                "gamma": _num(self.gamma), "delta": _num(self.delta),
                "eps1": _num(self.eps1), "eps2": _num(self.eps2),
                "targets": [_num(t) for t in self.targets],
                "loss_budget": self.loss_budget, "loss_se": self.loss_se,
                "transition_mass": self.transition_mass, "coverage_gap": self.coverage_gap,
                "gamma_dilation": self.gamma_dilation,
                "satisfied_within_budget": self.satisfied_within_budget,
                "items": self.items, "samples": self.samples, "seed": self.seed,
                "workers": self.workers, "good_per_stratum": list(self.good_per_stratum),
                "note": self.note}


def distribution_targets(stage: StageParams) -> tuple:
    k, q, n = stage.k, stage.q, stage.n
    return (Fraction(1, 2 * k**5 * q), Fraction(1, k**4), Fraction(1, n**5), Fraction(1, n**5))


def circular_extent(x: np.ndarray) -> float:
    """Length of the shortest arc of R/Z containing all points."""
    if x.size == 0:
        return 0.0
    s = np.sort(np.mod(x, 1.0))
    gaps = np.diff(np.concatenate([s, [s[0] + 1.0]]))
    return float(1.0 - gaps.max())


def _longest_run(occ: np.ndarray) -> tuple:
    """(start, length) of the longest circular run of True bins."""
    nb = occ.size
    if occ.all():
        return 0, nb
    if not occ.any():
        return 0, 0
    start = int(np.argmin(occ))  # begin scanning just after an empty bin
    best, best_start, cur, cur_start = 0, 0, 0, 0
    for step in range(1, nb + 1):
        i = (start + step) % nb
        if occ[i]:
            if cur == 0:
                cur_start = i
            cur += 1
            if cur > best:
                best, best_start = cur, cur_start
        else:
            cur = 0
    return best_start, best


def _dyadic_discrepancy(pos: np.ndarray, total: int, depth: int) -> float:
    """Max over dyadic subintervals of |p_hat - w| / w for positions in [0, 1)."""
    worst = 0.0
    if total == 0:
        return math.inf
    for d in range(1, depth + 1):
        nb = 1 << d
        counts = np.bincount(np.minimum((pos * nb).astype(np.int64), nb - 1), minlength=nb)
        w = 1.0 / nb
        worst = max(worst, float(np.max(np.abs(counts / total - w) / w)))
    return worst


def distribution_constants(stage: StageParams, Phi: TorusMap, element: tuple,
                           samples: int = 200_000, seed: int = 0, which: str = "Phi",
                           workers: Optional[int] = None) -> DistributionReport:
    """Achieved (gamma, delta, eps1, eps2) of ``Phi`` on the HAT_ETA element (u0, v0, j).

    Each u1-piece is sampled uniformly (random ZETA cell, uniform point inside it)
    with fibers uniform in T_j.  Over GOOD images: gamma is the circular theta
    extent; J_l is the longest run of occupied r-bins; delta = 1 - |J_l|; eps1 and
    eps2 are twice the worst relative discrepancy over dyadic subintervals of J_l
    (eps2 also requires the fiber to land in T_k with the map's shift law).
    The loss budget is the fraction of the element's bounding box that is gap or
    TRANSITION, estimated from independent uniform samples.
    """
    u0, v0, j = element
    k = stage.k
    per = max(samples // k, 1)
    w = worker_count() if workers is None else workers
    targets = distribution_targets(stage)

    gammas, deltas, e1s, e2s, goods, trans = [], [], [], [], [], []
    for l in range(k):
        def chunk(rng, size, _, l=l):
            d = sample_zeta_points(stage, rng, size, u0=u0, u1=l, v0=v0)
            t = (j + rng.random(size)) / k
            out = Phi.eval_batch(d["theta"], d["r"])
            tt = projectivize_batch(out.deriv, t)
            g = out.good
            return out.theta[g], out.r[g], tt[g], int(size - g.sum())

        parts = run_chunked(per, seed * 1_000_003 + l, chunk, w)
        th = np.concatenate([p[0] for p in parts])
        rr = np.concatenate([p[1] for p in parts])
        tt = np.concatenate([p[2] for p in parts])
        trans.append(sum(p[3] for p in parts) / per)
        goods.append(th.size)
        if th.size < MIN_STRATUM:
            raise AbcError("INSUFFICIENT_SAMPLES",
                           f"stratum u1={l} has {th.size} GOOD samples (< {MIN_STRATUM})")
        gammas.append(circular_extent(th))
        depth = max(1, min(20, int(math.floor(math.log2(th.size / 10)))))
        nb = 1 << depth
        occ = np.zeros(nb, dtype=bool)
        occ[np.minimum((rr * nb).astype(np.int64), nb - 1)] = True
        start, length = _longest_run(occ)
        lam = length / nb
        deltas.append(1.0 - lam)
        pos = np.mod(rr - start / nb, 1.0) / lam if lam > 0 else rr
        inj = pos < 1.0
        e1s.append(2.0 * _dyadic_discrepancy(pos[inj], th.size, DYADIC_DEPTH))
        kk = (j + int(shift_law_expected(u0, l, k, which.lower() if which == "phi" else "Phi"))) % k
        in_tk = (tt >= kk / k - FIBER_TOL) & (tt <= (kk + 1) / k + FIBER_TOL)
        if kk == k - 1:
            in_tk |= tt <= FIBER_TOL
        e2s.append(2.0 * _dyadic_discrepancy(pos[inj & in_tk], th.size, DYADIC_DEPTH))

    # loss budget from the bounding box
    box = cell_box(stage, CellIndex(Level.HAT_ETA, u0, v0=v0, j=j))
    th0, th1, r0, r1 = (float(x) for x in (box.theta_lo, box.theta_hi, box.r_lo, box.r_hi))

    def box_chunk(rng, size, _):
        th = th0 + (th1 - th0) * rng.random(size)
        rr = r0 + (r1 - r0) * rng.random(size)
        loc = locate_batch(stage, Level.ZETA, th, rr)
        in_el = loc["valid"] & (loc["u0"] == u0) & (loc["v0"] == v0)
        out = Phi.eval_batch(th, rr)
        return int(np.sum(~in_el | ~out.good))

    nbox = max(samples // 2, 1000)
    lost = sum(run_chunked(nbox, seed * 1_000_003 + 7919, box_chunk, w))
    loss = lost / nbox
    loss_se = math.sqrt(loss * (1 - loss) / nbox)
    cov_gap = 1.0 - float(box.measure * k / ((box.theta_hi - box.theta_lo) * (box.r_hi - box.r_lo)))
    tmass = float(np.mean(trans))
    gamma, delta = max(gammas), max(deltas)
    eps1, eps2 = max(e1s), max(e2s)
    g_t, d_t, e1_t, e2_t = (float(x) for x in targets)
    dil = loss * g_t
    items = {
        "gamma": gamma <= g_t + dil,
        "delta": delta <= d_t + loss,
        "eps1": eps1 <= e1_t + loss,
        "eps2": eps2 <= e2_t + loss,
    }
    return DistributionReport(
        element=(u0, v0, j), n=stage.n, gamma=gamma, delta=delta, eps1=eps1, eps2=eps2,
        targets=targets, loss_budget=loss, loss_se=loss_se, transition_mass=tmass,
        coverage_gap=cov_gap, gamma_dilation=dil,
        satisfied_within_budget=all(items.values()), items=items, samples=samples,
        seed=seed, workers=w, good_per_stratum=tuple(goods),
        note="discrepancies include the factor 2 of the dyadic family")


def perturbed_constants(report: DistributionReport, d1_bound) -> DistributionReport:
    """Constants after an analytic perturbation of size ``d1_bound`` in C^1.

    With ``s = max(2^-n, 2 d1_bound)``: gamma + s, delta + s, 2 eps + 3 s.  Exact
    Fractions stay exact.
    """
    if d1_bound < 0:
        raise AbcError("CONFIG", "d1_bound must be >= 0")
    exact = all(isinstance(x, (Fraction, int)) for x in
                (report.gamma, report.delta, report.eps1, report.eps2, d1_bound))
    two_n = Fraction(1, 2**report.n) if exact else 2.0**-report.n
    slack = max(two_n, 2 * d1_bound)
    g = report.gamma + slack
    d = report.delta + slack
    e1 = 2 * report.eps1 + 3 * slack
    e2 = 2 * report.eps2 + 3 * slack
    tg, td, te1, te2 = report.targets
    items = {"gamma": g <= tg + report.gamma_dilation, "delta": d <= td + report.loss_budget,
             "eps1": e1 <= te1 + report.loss_budget, "eps2": e2 <= te2 + report.loss_budget}
    return replace(report, gamma=g, delta=d, eps1=e1, eps2=e2, items=items,
                   satisfied_within_budget=all(items.values()),
                   note=f"perturbed with d1_bound={d1_bound}")


# ---------------------------------------------------------------- shift law

@dataclass
class ShiftLawReport:
    which: str
    samples: int
    good: int
    exact: int

    @property
    def fraction(self) -> float:
        return self.exact / self.good if self.good else math.nan

    def to_json(self) -> dict:
        return {"which": self.which, "samples": self.samples, "good": self.good,
                "exact": self.exact, "fraction": self.fraction}


def in_fiber_interval(t, kk, k, tol=FIBER_TOL):
    """Closed-interval membership of ``t`` in T_kk, mod 1."""
    lo = kk / k
    d = np.mod(t - lo + tol, 1.0)
    return d <= 1.0 / k + 2 * tol


def shift_law_check(S: AssembledStage, which: str = "phi", samples: int = 100_000,
                    seed: int = 0, workers: Optional[int] = None) -> ShiftLawReport:
    """Fraction of GOOD samples whose image fiber lands in T_k, k = j + shift (mod k)."""
    st = S.stage
    k = st.k
    mp = S.phi if which == "phi" else S.Phi

    def chunk(rng, size, _):
        d = sample_zeta_points(st, rng, size)
        t = rng.random(size)
        jj = np.minimum((t * k).astype(np.int64), k - 1)
        out = mp.eval_batch(d["theta"], d["r"])
        tt = projectivize_batch(out.deriv, t)
        kk = (jj + shift_law_expected(d["u0"], d["u1"], k, which)) % k
        ok = in_fiber_interval(tt, kk, k)
        g = out.good
        return int(g.sum()), int((ok & g).sum())

    parts = run_chunked(samples, seed, chunk, workers)
    return ShiftLawReport(which, samples, sum(p[0] for p in parts), sum(p[1] for p in parts))


# ---------------------------------------------------------------- mixing

@dataclass
class MixingReport:
    pairs: list
    samples: int
    seed: int
    loss_budget: float
    shift_law_fraction: Optional[float]
    workers: int

    def to_json(self) -> dict:
        return {"pairs": self.pairs, "samples": self.samples, "seed": self.seed,
                "loss_budget": self.loss_budget, "shift_law_fraction": self.shift_law_fraction,
                "workers": self.workers}


def power(f: TorusMap, m: int, stage: Optional[AssembledStage] = None) -> TorusMap:
    """The m-th iterate.  Conjugated rotations telescope to one conjugated rotation.

    For an assembled stage at its own mixing time the iterate is written through
    the mixing map, whose good domain tracks the column alignment.
    """
    if m < 0:
        raise AbcError("CONFIG", "m must be >= 0")
    if m == 0:
        return Identity()
    if isinstance(f, Rotation):
        return Rotation(f.alpha * m)
    if stage is not None and f is stage.f:
        if m == stage.mixing.m:
            prev = stage.prev.H if stage.prev is not None else Identity()
            return Compose(prev, stage.g, stage.Phi, stage.g.inverse(), prev.inverse(),
                           name=f"f{stage.stage.n}^{m}")
        return Compose(stage.H, Rotation(stage.alpha_next * m), stage.H.inverse(),
                       name=f"f{stage.stage.n}^{m}")
    return Compose(*([f] * m), name=f"{f.name}^{m}")


def mixing_correlation(f: TorusMap, m: int, gammas: Sequence[FramedSet],
                       squares: Sequence[FramedSet], samples: int = 100_000, seed: int = 0,
                       stage: Optional[AssembledStage] = None, cap: float = DEFAULT_CAP,
                       workers: Optional[int] = None) -> MixingReport:
    """Correlations ``mu(G & F^-m C) - mu(G) mu(C)`` with fiber-uniform set measures.

    ``mu(G)`` and ``mu(C)`` come from the exact fiber-uniform rule.  The joint term
    is ``mu(G) * p`` with ``p`` the fraction of uniform samples of G whose image
    lies in C; its standard error is ``mu(G) sqrt(p (1-p) / N)``.  Samples whose
    frame, iterate or pullback leaves a good domain are excluded and counted into
    the loss budget.
    """
    F = power(f, m, stage)
    w = worker_count() if workers is None else workers
    pairs, lost_total, law_ok, law_n = [], 0, 0, 0
    for gi, G in enumerate(gammas):
        def chunk(rng, size, _, G=G):
            th, r, t, good, labels = G.sample(rng, size)
            out = F.eval_batch(th, r)
            tt = projectivize_batch(out.deriv, t)
            valid = good & out.good
            res = []
            for C in squares:
                inside, cgood = C.contains(out.theta, out.r, tt)
                res.append((valid & cgood, inside))
            allvalid = valid.copy()
            for v, _ in res:
                allvalid &= v
            hits = [int(np.sum(inside & allvalid)) for _, inside in res]
            law = (0, 0)
            if isinstance(G, HatElementSet) and squares:
                _, _, bt, bgood = squares[0].pullback(out.theta, out.r, tt)
                k = G.stage.k
                kk = (G.j + shift_law_expected(labels["u0"], labels["u1"], k, "Phi")) % k
                ok = in_fiber_interval(bt, kk, k) & allvalid & bgood
                law = (int(np.sum(allvalid & bgood)), int(np.sum(ok)))
            return int(allvalid.sum()), hits, law

        parts = run_chunked(samples, seed * 1_000_003 + gi, chunk, w)
        nvalid = sum(p[0] for p in parts)
        lost_total += samples - nvalid
        law_n += sum(p[2][0] for p in parts)
        law_ok += sum(p[2][1] for p in parts)
        muG = G.measure
        for ci, C in enumerate(squares):
            hits = sum(p[1][ci] for p in parts)
            p = hits / nvalid if nvalid else math.nan
            joint = float(muG) * p
            prod = muG * C.measure
            corr = joint - float(prod)
            se = float(muG) * math.sqrt(max(p * (1 - p), 0.0) / nvalid) if nvalid else math.nan
            pairs.append({"gamma": G.name, "square": C.name, "mu_gamma": _num(muG),
                          "mu_square": _num(C.measure), "joint": joint, "product": _num(prod),
                          "correlation": corr, "abs_correlation": abs(corr), "se": se,
                          "normalized": corr / float(prod) if prod else math.nan,
                          "valid_samples": nvalid})
    loss = lost_total / (samples * max(len(gammas), 1))
    if loss > cap:
        raise AbcError("BUDGET_EXCEEDED", f"loss budget {loss:.4f} exceeds cap {cap}")
    return MixingReport(pairs, samples, seed, loss, law_ok / law_n if law_n else None, w)


def stage_mixing_sets(S: AssembledStage, elements: Sequence[tuple], squares: Sequence[tuple]):
    """Framed sets of the criterion: G = (H_prev o g)(hat element), C = H_prev(box x T_k).

    ``squares`` entries are ``(theta0, r0, side, kk)``.
    """
    st = S.stage
    prev = S.prev.H if S.prev is not None else Identity()
    g_frame = Compose(prev, S.g)
    gs = [HatElementSet(st, g_frame, *e) for e in elements]
    k = st.k
    cs = []
    for th0, r0, side, kk in squares:
        side = Fraction(side)
        if not (Fraction(1, 4 * k) <= side <= Fraction(2, k)):
            raise AbcError("CONFIG", f"square side {side} outside [1/(4k), 2/k]")
        th0, r0 = Fraction(th0), Fraction(r0)
        cs.append(FramedSet(prev, (th0, th0 + side, r0, r0 + side),
                            (Fraction(kk, k), Fraction(kk + 1, k)), f"C({th0},{r0},{side},{kk})"))
    return gs, cs


# ---------------------------------------------------------------- norms

@dataclass
class NormReport:
    map_id: str
    r: int
    per_order: list
    estimate: float
    good_fraction: float
    flagged: bool
    target_bound: Optional[float] = None
    note: str = ""

    def to_json(self) -> dict:
        return {"map": self.map_id, "r": self.r, "per_order": self.per_order,
                "estimate": self.estimate, "good_fraction": self.good_fraction,
                "flagged": self.flagged, "target_bound": self.target_bound, "note": self.note}


def _shear_orders(expr, r: int, grid: int):
    x = (np.arange(grid * grid) + 0.5) / (grid * grid)
    prof = getattr(expr, "profile", None)
    if isinstance(prof, StepProfile):
        # transitions are far narrower than any uniform grid: resolve each one
        half = 2 * float(prof.eps) / prof.a
        s = np.linspace(-half, half, 4 * grid + 1)
        centers = np.arange(prof.a + 1) / prof.a
        x = np.concatenate([x, (centers[:, None] + s[None, :]).ravel()])
    jet, _ = expr.displacement_jet(x, r)
    per = [max(1.0, float(np.max(np.abs(jet[:, 1]))))]
    for i in range(2, r + 1):
        per.append(float(np.max(np.abs(jet[:, i]))))
    return per


def _fd_orders(expr: TorusMap, r: int, grid: int, h: float):
    base = (np.arange(grid) + 0.5) / grid
    th, rr = np.meshgrid(base, base, indexing="ij")
    th, rr = th.ravel(), rr.ravel()
    factors = getattr(expr, "factors", (expr,))
    for f in factors:
        if hasattr(f, "probe_points"):
            pt, pr = f.probe_points(grid)
            th, rr = np.concatenate([th, pt]), np.concatenate([rr, pr])
    offsets = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)]
    evals = [expr.eval_batch(th + a * h, rr + b * h) for a, b in offsets]
    good = np.ones(th.size, dtype=bool)
    if not expr.smooth_everywhere:
        for e in evals:
            good &= e.good
    J = {o: e.deriv for o, e in zip(offsets, evals)}
    per = [float(np.max(np.abs(J[(0, 0)][good]))) if good.any() else math.nan]
    if r >= 2:
        d_th = (J[(1, 0)] - J[(-1, 0)]) / (2 * h)
        d_r = (J[(0, 1)] - J[(0, -1)]) / (2 * h)
        v = max(np.max(np.abs(d_th[good])), np.max(np.abs(d_r[good]))) if good.any() else math.nan
        per.append(float(v))
    if r >= 3:
        c = J[(0, 0)]
        d_tt = (J[(1, 0)] - 2 * c + J[(-1, 0)]) / h**2
        d_rr = (J[(0, 1)] - 2 * c + J[(0, -1)]) / h**2
        d_tr = (J[(1, 1)] - J[(1, -1)] - J[(-1, 1)] + J[(-1, -1)]) / (4 * h * h)
        v = max(np.max(np.abs(a[good])) for a in (d_tt, d_rr, d_tr)) if good.any() else math.nan
        per.append(float(v))
    return per, float(good.mean())


def norm_estimate(expr: TorusMap, r: int = 1, grid: int = 128, h: Optional[float] = None,
                  stage_q: Optional[int] = None) -> NormReport:
    """Grid maxima of derivative magnitudes of orders 1..r for the map and its inverse.

    Shears use closed-form derivatives of the displacement (any r <= 3); other maps
    use analytic first derivatives and central differences of them for orders 2
    and 3.  For maps that are only piecewise closed-form, stencils leaving the good
    domain are skipped and a low good fraction is flagged.
    """
    if r < 1 or r > 3:
        raise AbcError("CONFIG", "norm order must be 1, 2 or 3")
    note = ""
    if hasattr(expr, "displacement_jet"):
        per = _shear_orders(expr, r, grid)
        gf = 1.0
        note = "closed form"
    else:
        if h is None:
            h = min(1e-4, expr.min_width / 50)
        per_f, gf1 = _fd_orders(expr, r, grid, h)
        per_i, gf2 = _fd_orders(expr.inverse(), r, grid, h)
        per = [max(a, b) for a, b in zip(per_f, per_i)]
        gf = min(gf1, gf2)
        note = f"finite differences of analytic jets, h={h:.3g}"
    bound = None
    if stage_q is not None and isinstance(expr, ShearMap):
        bound = SHEAR_NORM_CONSTANT[r] * stage_q**r
    return NormReport(expr.name, r, per, float(max(per)), gf, gf < 0.5, bound, note)


def composition_ratio(F: TorusMap, G: TorusMap, r: int, grid: int = 64) -> float:
    """``|||F o G|||_r / (|||F|||_r^r |||G|||_r^r)`` on a grid."""
    a = norm_estimate(Compose(F, G), r, grid).estimate
    b = norm_estimate(F, r, grid).estimate
    c = norm_estimate(G, r, grid).estimate
    return a / (b**r * c**r)


# ---------------------------------------------------------------- shear spreading

@dataclass
class ShearSpreadReport:
    hypothesis: bool
    lhs: Fraction
    bound: Fraction
    terms: tuple
    satisfied: bool

    def to_json(self) -> dict:
        return {"hypothesis_b_lambda_K_gt_2": self.hypothesis, "lhs": fmt_rational(self.lhs),
                "bound": fmt_rational(self.bound),
                "terms": [fmt_rational(t) for t in self.terms], "satisfied": self.satisfied}


def _arcs_intersect(a0: Fraction, a1: Fraction, b0: Fraction, b1: Fraction) -> bool:
    """Do the closed arcs [a0, a1] and [b0, b1] of R/Z meet (lengths < 1)?"""
    for shift in (-1, 0, 1):
        if a0 + shift <= b1 and b0 <= a1 + shift:
            return True
    return False


def shear_spread_check(stage: StageParams, i: int, c: Fraction, gamma: Fraction,
                      L: tuple) -> ShearSpreadReport:
    """Exact check of the strip-spreading estimate for the stage shear on plateau ``i``.

    On the plateau K the shear is the translation by ``b i / a``, so the set of r
    in K whose strip point lands in L is all of K or empty, decided exactly.
    """
    prof = StepProfile.from_stage(stage)
    a, b, eps = prof.a, prof.b, prof.eps
    lam_K = (1 - 4 * eps) / a
    l1, l2 = Fraction(L[0]), Fraction(L[1])
    lam_L = l2 - l1
    shift = Fraction(b * i, a) if i < a else Fraction(0)
    hit = _arcs_intersect(c + shift, c + gamma + shift, l1, l2)
    lam_Q = lam_K if hit else Fraction(0)
    lhs = abs(lam_Q - lam_K * lam_L)
    terms = (Fraction(2, b) * lam_L, 2 * gamma / b, gamma * lam_K, Fraction(b, a) * lam_K,
             Fraction(2, a))
    bound = sum(terms, Fraction(0))
    return ShearSpreadReport(b * lam_K > 2, lhs, bound, terms, lhs <= bound)

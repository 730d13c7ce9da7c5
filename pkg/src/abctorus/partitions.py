"""Exact cell generators, point location and coverage for the four partial partitions.

Digit layout.  With ``U = 2 k^16 q`` every coordinate is written in units of 1/U::

    theta * U = u0 k^16 + u1 k^15 + u2 k^10 + u3 k^5 + u4
    r * U     = v0 (2 k^11 q) + v1 k^5 + v2

The finest level (ZETA) keeps all eight digits.  ETA keeps (u0, u1, u2; v0).
TILDE_ETA pieces are unions of ZETA cells sharing (u0, u1, v0); HAT_ETA elements
are unions over u1 times a fiber interval T_j = [j/k, (j+1)/k].

Every cell carries a margin of ``1/(2 n^5 k^10)`` of its width on each side.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Optional

import numpy as np

from .errors import AbcError
from .maps import FLOAT_MIN_WIDTH, ProjPoint, TorusPoint
from .scheduler import StageParams, fmt_rational

# guard band, as a fraction of the finest cell width, for float membership
GUARD = 2.0**-30


class Level(enum.Enum):
    ETA = "ETA"
    ZETA = "ZETA"
    TILDE_ETA = "TILDE_ETA"
    HAT_ETA = "HAT_ETA"


@dataclass(frozen=True)
class CellIndex:
    level: Level
    u0: int
    u1: Optional[int] = None
    u2: Optional[int] = None
    u3: Optional[int] = None
    u4: Optional[int] = None
    v0: Optional[int] = None
    v1: Optional[int] = None
    v2: Optional[int] = None
    j: Optional[int] = None

    def digits(self) -> tuple:
        return tuple(getattr(self, f) for f in ("u0", "u1", "u2", "u3", "u4", "v0", "v1", "v2", "j")
                     if getattr(self, f) is not None)


@dataclass(frozen=True)
class CellBox:
    theta_lo: Fraction
    theta_hi: Fraction
    r_lo: Fraction
    r_hi: Fraction
    t_lo: Optional[Fraction] = None
    t_hi: Optional[Fraction] = None
    # exact measure of the element; differs from the box area for unions
    measure: Optional[Fraction] = None

    def center(self):
        tc = (self.theta_lo + self.theta_hi) / 2
        rc = (self.r_lo + self.r_hi) / 2
        if self.t_lo is None:
            return TorusPoint(tc, rc)
        return ProjPoint(TorusPoint(tc, rc), float((self.t_lo + self.t_hi) / 2))

    @property
    def area(self) -> Fraction:
        return (self.theta_hi - self.theta_lo) * (self.r_hi - self.r_lo)


@dataclass(frozen=True)
class CoverageReport:
    level: Level
    cell_count: int
    total_measure: Fraction
    target_bound: Fraction
    satisfied: bool
    note: str = ""

    def to_json(self) -> dict:
        return {"level": self.level.value, "cell_count": self.cell_count,
                "total_measure": fmt_rational(self.total_measure),
                "total_measure_float": float(self.total_measure),
                "bound": fmt_rational(self.target_bound), "satisfied": self.satisfied,
                "note": self.note}


NONE_IN_GAP = None

_BOUND_NUMERATOR = {Level.ETA: 8, Level.ZETA: 16, Level.TILDE_ETA: 25, Level.HAT_ETA: 50}


class Geometry:
    """Integer constants of the digit layout for one stage."""

    def __init__(self, stage: StageParams):
        self.n, self.k, self.q = stage.n, stage.k, stage.q
        k, q = self.k, self.q
        self.K5 = k**5
        self.U = 2 * k**16 * q
        self.V1 = 2 * k**6 * q  # range of v1
        self.margin = Fraction(1, 2 * self.n**5 * k**10)
        self.lo_digit, self.hi_digit = 1, self.K5 - 2
        self.v1_lo, self.v1_hi = 2 * q, self.V1 - 2 * q - 1

    @property
    def empty(self) -> bool:
        return self.hi_digit < self.lo_digit or self.v1_hi < self.v1_lo

    def finest_width(self, level: Level) -> Fraction:
        if level == Level.ETA:
            return self.margin * Fraction(1, 2 * self.k**6 * self.q)
        return self.margin / self.U

    def eta_theta_width(self) -> Fraction:
        return Fraction(1, 2 * self.k**6 * self.q) * (1 - 2 * self.margin)

    def eta_r_width(self) -> Fraction:
        return Fraction(1, self.K5) * (1 - 2 * self.margin)

    def zeta_side(self) -> Fraction:
        return Fraction(1, self.U) * (1 - 2 * self.margin)

    # counts
    def count(self, level: Level) -> int:
        if self.empty:
            return 0
        k, q, D = self.k, self.q, self.K5 - 2
        if level == Level.ETA:
            return 2 * q * k * D * D
        if level == Level.ZETA:
            return 2 * q * k * D**5 * (self.V1 - 4 * q)
        if level == Level.TILDE_ETA:
            return 2 * q * k * D
        return 2 * q * D * k

    def zeta_per_piece(self) -> int:
        return (self.K5 - 2) ** 4 * (self.V1 - 4 * self.q)

    def measure(self, level: Level) -> Fraction:
        """Exact measure of one element (fiber normalized to total length 1)."""
        z = self.zeta_side() ** 2
        if level == Level.ETA:
            return self.eta_theta_width() * self.eta_r_width()
        if level == Level.ZETA:
            return z
        if level == Level.TILDE_ETA:
            return z * self.zeta_per_piece()
        # HAT: k pieces (one per u1) times a fiber interval of length 1/k
        return z * self.zeta_per_piece()

    def check_float(self, level: Level) -> None:
        if float(self.finest_width(level)) < FLOAT_MIN_WIDTH:
            raise AbcError("NUMERIC_UNDERFLOW",
                           f"{level.value} margin {float(self.finest_width(level)):.3g} "
                           "is below 2^-40; use exact mode")


def _frac_ok_exact(f: Fraction, m: Fraction) -> bool:
    return m <= f <= 1 - m


def _split_exact(x: Fraction, unit: int):
    y = x * unit
    i = math.floor(y)
    return i, y - i


def _box_1d(base: int, unit: int, m: Fraction):
    return Fraction(base, unit) + m / unit, Fraction(base + 1, unit) - m / unit


def cell_box(stage: StageParams, idx: CellIndex) -> CellBox:
    g = Geometry(stage)
    k, q, K5, U, m = g.k, g.q, g.K5, g.U, g.margin
    if idx.level == Level.ETA:
        ut = 2 * k**6 * q
        th = _box_1d(idx.u0 * k**6 + idx.u1 * k**5 + idx.u2, ut, m)
        rr = _box_1d(idx.v0, K5, m)
        return CellBox(th[0], th[1], rr[0], rr[1], measure=g.measure(Level.ETA))
    if idx.level == Level.ZETA:
        th = _box_1d(idx.u0 * k**16 + idx.u1 * k**15 + idx.u2 * k**10 + idx.u3 * k**5 + idx.u4, U, m)
        rr = _box_1d(idx.v0 * 2 * k**11 * q + idx.v1 * K5 + idx.v2, U, m)
        return CellBox(th[0], th[1], rr[0], rr[1], measure=g.measure(Level.ZETA))
    lo_u1, hi_u1 = (idx.u1, idx.u1) if idx.level == Level.TILDE_ETA else (0, k - 1)
    lo = idx.u0 * k**16 + lo_u1 * k**15 + 1 * k**10 + 1 * k**5 + 1
    hi = idx.u0 * k**16 + hi_u1 * k**15 + (K5 - 2) * k**10 + (K5 - 2) * k**5 + (K5 - 2)
    rlo = idx.v0 * 2 * k**11 * q + g.v1_lo * K5 + 1
    rhi = idx.v0 * 2 * k**11 * q + g.v1_hi * K5 + (K5 - 2)
    box = dict(theta_lo=_box_1d(lo, U, m)[0], theta_hi=_box_1d(hi, U, m)[1],
               r_lo=_box_1d(rlo, U, m)[0], r_hi=_box_1d(rhi, U, m)[1])
    if idx.level == Level.TILDE_ETA:
        return CellBox(**box, measure=g.measure(Level.TILDE_ETA))
    return CellBox(**box, t_lo=Fraction(idx.j, k), t_hi=Fraction(idx.j + 1, k),
                   measure=g.measure(Level.HAT_ETA))


def cell_indices(stage: StageParams, level: Level) -> Iterator[CellIndex]:
    g = Geometry(stage)
    if g.empty:
        return
    k, q = g.k, g.q
    D = range(g.lo_digit, g.hi_digit + 1)
    if level == Level.ETA:
        for u0 in range(2 * q):
            for u1 in range(k):
                for u2 in D:
                    for v0 in D:
                        yield CellIndex(level, u0, u1, u2, v0=v0)
    elif level == Level.ZETA:
        for u0 in range(2 * q):
            for u1 in range(k):
                for u2 in D:
                    for u3 in D:
                        for u4 in D:
                            for v0 in D:
                                for v1 in range(g.v1_lo, g.v1_hi + 1):
                                    for v2 in D:
                                        yield CellIndex(level, u0, u1, u2, u3, u4, v0, v1, v2)
    elif level == Level.TILDE_ETA:
        for u0 in range(2 * q):
            for u1 in range(k):
                for v0 in D:
                    yield CellIndex(level, u0, u1, v0=v0)
    else:
        for u0 in range(2 * q):
            for v0 in D:
                for j in range(k):
                    yield CellIndex(level, u0, v0=v0, j=j)


def cells(stage: StageParams, level: Level, mode: str = "float") -> Iterator[tuple]:
    """Lazily enumerate ``(CellIndex, CellBox)`` pairs with exact rational boxes."""
    g = Geometry(stage)
    if mode == "float":
        g.check_float(level)
    elif mode != "exact":
        raise AbcError("CONFIG", f"mode must be float or exact, got {mode!r}")
    for idx in cell_indices(stage, level):
        yield idx, cell_box(stage, idx)


# ---------------------------------------------------------------- location

def _locate_exact(stage: StageParams, level: Level, theta: Fraction, r: Fraction, t=None):
    g = Geometry(stage)
    if g.empty:
        return NONE_IN_GAP
    k, q, K5, m = g.k, g.q, g.K5, g.margin
    theta, r = Fraction(theta) % 1, Fraction(r) % 1
    if level == Level.ETA:
        ui, fu = _split_exact(theta, 2 * k**6 * q)
        vi, fv = _split_exact(r, K5)
        if not (_frac_ok_exact(fu, m) and _frac_ok_exact(fv, m)):
            return NONE_IN_GAP
        u2, rest = ui % K5, ui // K5
        u1, u0 = rest % k, rest // k
        if not (g.lo_digit <= u2 <= g.hi_digit and g.lo_digit <= vi <= g.hi_digit):
            return NONE_IN_GAP
        return CellIndex(level, u0, u1, u2, v0=vi)
    ui, fu = _split_exact(theta, g.U)
    vi, fv = _split_exact(r, g.U)
    if not (_frac_ok_exact(fu, m) and _frac_ok_exact(fv, m)):
        return NONE_IN_GAP
    digits = _digits_from_ints(g, ui, vi)
    if not _digits_valid(g, digits):
        return NONE_IN_GAP
    return _coarsen(g, level, digits, t)


def _digits_from_ints(g: Geometry, ui, vi):
    K5, k = g.K5, g.k
    u4 = ui % K5
    rest = ui // K5
    u3 = rest % K5
    rest = rest // K5
    u2 = rest % K5
    rest = rest // K5
    u1 = rest % k
    u0 = rest // k
    v2 = vi % K5
    rest = vi // K5
    v1 = rest % g.V1
    v0 = rest // g.V1
    return u0, u1, u2, u3, u4, v0, v1, v2


def _digits_valid(g: Geometry, d):
    u0, u1, u2, u3, u4, v0, v1, v2 = d
    lo, hi = g.lo_digit, g.hi_digit
    ok = True
    for x in (u2, u3, u4, v0, v2):
        ok = ok & (lo <= x) & (x <= hi)
    return ok & (g.v1_lo <= v1) & (v1 <= g.v1_hi)


def _coarsen(g: Geometry, level: Level, d, t):
    u0, u1, u2, u3, u4, v0, v1, v2 = d
    if level == Level.ZETA:
        return CellIndex(level, u0, u1, u2, u3, u4, v0, v1, v2)
    if level == Level.TILDE_ETA:
        return CellIndex(level, u0, u1, v0=v0)
    if t is None:
        raise AbcError("USAGE", "HAT_ETA location needs a fiber coordinate")
    j = min(int(math.floor(float(t) * g.k)), g.k - 1)
    return CellIndex(level, u0, v0=v0, j=j)


def locate(stage: StageParams, level: Level, p):
    """Index of the cell containing ``p`` or ``NONE_IN_GAP`` (None).

    Exact Fraction coordinates use exact digit arithmetic; floats use the
    guarded decomposition of :func:`locate_batch`.
    """
    t = None
    if isinstance(p, ProjPoint):
        t, p = p.t, p.point
    if isinstance(p.theta, Fraction) and isinstance(p.r, Fraction):
        return _locate_exact(stage, level, p.theta, p.r, t)
    res = locate_batch(stage, level, np.array([p.theta], dtype=float), np.array([p.r], dtype=float),
                       None if t is None else np.array([t]))
    if not res["valid"][0]:
        return NONE_IN_GAP
    if level == Level.ETA:
        return CellIndex(level, int(res["u0"][0]), int(res["u1"][0]), int(res["u2"][0]),
                         v0=int(res["v0"][0]))
    d = tuple(int(res[f][0]) for f in ("u0", "u1", "u2", "u3", "u4", "v0", "v1", "v2"))
    return _coarsen(Geometry(stage), level, d, t)


def _split_float(x: np.ndarray, unit: int):
    y = x * float(unit)
    i = np.floor(y)
    return i.astype(np.int64), y - i


def locate_batch(stage: StageParams, level: Level, theta, r, t=None) -> dict:
    """Vectorized float location; returns digit arrays and a ``valid`` mask."""
    g = Geometry(stage)
    g.check_float(level)
    theta = np.mod(np.asarray(theta, dtype=float), 1.0)
    r = np.mod(np.asarray(r, dtype=float), 1.0)
    lo_f = float(g.margin) + GUARD
    hi_f = 1.0 - lo_f
    if level == Level.ETA:
        ui, fu = _split_float(theta, 2 * g.k**6 * g.q)
        vi, fv = _split_float(r, g.K5)
        inside = (fu >= lo_f) & (fu <= hi_f) & (fv >= lo_f) & (fv <= hi_f)
        u2, rest = ui % g.K5, ui // g.K5
        out = {"u0": rest // g.k, "u1": rest % g.k, "u2": u2, "v0": vi}
        out["valid"] = inside & (u2 >= g.lo_digit) & (u2 <= g.hi_digit) & \
            (vi >= g.lo_digit) & (vi <= g.hi_digit) & (not g.empty)
        return out
    ui, fu = _split_float(theta, g.U)
    vi, fv = _split_float(r, g.U)
    inside = (fu >= lo_f) & (fu <= hi_f) & (fv >= lo_f) & (fv <= hi_f)
    d = _digits_from_ints(g, ui, vi)
    out = dict(zip(("u0", "u1", "u2", "u3", "u4", "v0", "v1", "v2"), d))
    out["valid"] = inside & _digits_valid(g, d) & (not g.empty)
    if level == Level.HAT_ETA:
        if t is None:
            raise AbcError("USAGE", "HAT_ETA location needs fiber coordinates")
        out["j"] = np.minimum(np.floor(np.asarray(t) * g.k).astype(np.int64), g.k - 1)
    return out


# ---------------------------------------------------------------- coverage

def coverage(stage: StageParams, level: Level) -> CoverageReport:
    g = Geometry(stage)
    bound = 1 - Fraction(_BOUND_NUMERATOR[level], g.K5)
    count = g.count(level)
    if count == 0:
        return CoverageReport(level, 0, Fraction(0), bound, False,
                              "empty partition: index range is empty for this k")
    total = count * g.measure(level)
    return CoverageReport(level, count, total, bound, total >= bound)


def piece_measure(stage: StageParams) -> Fraction:
    """Exact measure of one TILDE_ETA piece."""
    return Geometry(stage).measure(Level.TILDE_ETA)


def diameter_decay(stages) -> list[dict]:
    """Per stage, the largest cell diameter of each level and the reference bound."""
    out = []
    for st in stages:
        g = Geometry(st)
        eta = math.hypot(float(g.eta_theta_width()), float(g.eta_r_width()))
        zeta = math.sqrt(2.0) * float(g.zeta_side())
        idx = CellIndex(Level.TILDE_ETA, 0, 0, v0=1)
        box = cell_box(st, idx)
        tilde = math.hypot(float(box.theta_hi - box.theta_lo), float(box.r_hi - box.r_lo))
        out.append({
            "n": st.n,
            "ETA": eta, "ETA_bound": math.sqrt(2.0) / g.K5,
            "ZETA": zeta, "ZETA_bound": math.sqrt(2.0) / (g.k**15 * g.q),
            "TILDE_ETA": tilde,
        })
    return out


def cells_csv_rows(stage: StageParams, level: Level, mode: str = "float"):
    """Rows for a partition dump: level, digits, exact bounds as "num/den"."""
    for idx, box in cells(stage, level, mode):
        yield [level.value, " ".join(str(d) for d in idx.digits()),
               fmt_rational(box.theta_lo), fmt_rational(box.theta_hi),
               fmt_rational(box.r_lo), fmt_rational(box.r_hi)]


def sample_zeta_points(stage: StageParams, rng: np.random.Generator, size: int,
                       u0=None, u1=None, v0=None) -> dict:
    """Uniform samples from the union of ZETA cells, optionally with fixed digits.

    Since all ZETA cells are congruent, drawing the digits uniformly and then a
    uniform position inside the cell gives the uniform law on the union.
    """
    g = Geometry(stage)
    if g.empty:
        raise AbcError("USAGE", "empty partition for this k")
    lo, hi = g.lo_digit, g.hi_digit + 1

    def pick(fixed, low, high):
        if fixed is None:
            return rng.integers(low, high, size)
        return np.full(size, int(fixed), dtype=np.int64)

    d = {
        "u0": pick(u0, 0, 2 * g.q), "u1": pick(u1, 0, g.k),
        "u2": rng.integers(lo, hi, size), "u3": rng.integers(lo, hi, size),
        "u4": rng.integers(lo, hi, size), "v0": pick(v0, lo, hi),
        "v1": rng.integers(g.v1_lo, g.v1_hi + 1, size), "v2": rng.integers(lo, hi, size),
    }
    k, K5 = g.k, g.K5
    ui = (((d["u0"] * k + d["u1"]) * K5 + d["u2"]) * K5 + d["u3"]) * K5 + d["u4"]
    vi = (d["v0"] * g.V1 + d["v1"]) * K5 + d["v2"]
    m = float(g.margin)
    ot = m + (1 - 2 * m) * rng.random(size)
    orr = m + (1 - 2 * m) * rng.random(size)
    d["theta"] = (ui + ot) / g.U
    d["r"] = (vi + orr) / g.U
    return d

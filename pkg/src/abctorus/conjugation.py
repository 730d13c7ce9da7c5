"""Explicit conjugation maps: the shear, the two inner rotations, their assembly per stage.

Each map is exact on its good domain.  Outside it the map still returns an image
(a smooth transition for the shear and the block rotation, the identity for the
digit permutation) tagged TRANSITION, so downstream statistics can budget it.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .errors import AbcError
from .maps import (Batch, Compose, PartialMapResult, Rotation, TorusMap, TorusPoint,
                   identity_derivs, rotation_matrices, wrap01, Jet, Tag)
from .partitions import Geometry, Level, locate_batch, _split_exact, _digits_from_ints, \
    _digits_valid
from .scheduler import MixingTime, StageParams, next_alpha
from .smooth import rho_jet

DEFAULT_R1 = 0.42
DEFAULT_R2 = 0.48


# ---------------------------------------------------------------- step profile

@dataclass(frozen=True)
class StepProfile:
    """Staircase profile ``(b/a) sum_{i=1}^{a-1} rho((a x - i)/(2 eps))`` on [0, 1]."""

    a: int
    b: int
    eps: Fraction

    def __post_init__(self):
        eps = Fraction(self.eps)
        object.__setattr__(self, "eps", eps)
        if self.a < 1:
            raise AbcError("CONFIG", "profile needs a >= 1")
        if not (0 < eps < Fraction(1, 4)):
            raise AbcError("CONFIG", f"profile eps={eps} must lie in (0, 1/4)")
        if (1 / (2 * eps)).denominator != 1:
            raise AbcError("CONFIG", "1/(2 eps) must be an integer")

    @classmethod
    def from_stage(cls, stage: StageParams) -> "StepProfile":
        return cls(stage.shear_a, stage.shear_b, stage.shear_eps)

    @property
    def jump(self) -> Fraction:
        """``psi(1) - psi(0)`` of the literal staircase."""
        return Fraction(self.b * (self.a - 1), self.a)

    @property
    def collar(self) -> float:
        """Width of the wrap collar where the torus profile returns to 0."""
        return float(2 * self.eps / self.a)

    def _literal(self, x: np.ndarray, order: int):
        a, b = self.a, self.b
        two_eps = float(2 * self.eps)
        ax = a * x
        j = np.floor(ax)
        xl = ax - j
        j = j.astype(np.int64)
        count = np.clip(np.minimum(j - 1, a - 1), 0, None).astype(float)
        act_lo = (j >= 1) & (j <= a - 1)
        act_hi = (j + 1 <= a - 1) & (j + 1 >= 1)
        arg_lo = xl / two_eps
        arg_hi = (xl - 1.0) / two_eps
        jl = rho_jet(arg_lo, order) * act_lo[..., None]
        jh = rho_jet(arg_hi, order) * act_hi[..., None]
        out = np.empty(x.shape + (order + 1,))
        out[..., 0] = b * (count + jl[..., 0] + jh[..., 0]) / a
        scale = a / two_eps
        for i in range(1, order + 1):
            out[..., i] = (b / a) * scale**i * (jl[..., i] + jh[..., i])
        flat = (~act_lo | (arg_lo >= 1.0)) & (~act_hi | (arg_hi <= -1.0))
        return out, flat

    def literal_jet(self, x, order: int = 1):
        """Derivatives of the literal staircase and the flat-set mask."""
        return self._literal(np.asarray(x, dtype=float), order)

    def torus_jet(self, r, order: int = 1):
        """Derivatives of the periodized profile on R/Z and its flat-set mask.

        On the collar [1 - 2eps/a, 1) the jump is removed by a rising copy of the
        step, so the profile is smooth and 1-periodic and vanishes near r = 0.
        """
        r = wrap01(np.asarray(r, dtype=float))
        out, flat = self._literal(r, order)
        a, J = self.a, float(self.jump)
        eps = float(self.eps)
        arg_c = a * (r - 1.0) / eps + 1.0
        in_c = arg_c > -1.0
        if np.any(in_c):
            cj = rho_jet(arg_c[in_c], order)
            for i in range(order + 1):
                out[in_c, i] -= J * (a / eps) ** i * cj[:, i]
            flat = flat & ~in_c
        return out, flat


def step_profile_eval(sp: StepProfile, x):
    """Value of the literal staircase at ``x`` in [0, 1]."""
    val = sp.literal_jet(np.atleast_1d(x), 0)[0][..., 0]
    return float(val[0]) if np.ndim(x) == 0 else val


# ---------------------------------------------------------------- shear

class ShearMap(TorusMap):
    """``(theta, r) -> (theta + psi(r), r)`` with the periodized staircase ``psi``."""

    smooth_everywhere = True

    def __init__(self, profile: StepProfile, q: int, sign: int = 1):
        self.profile, self.q, self.sign = profile, q, sign
        self.name = "g" if sign == 1 else "g^-1"

    @classmethod
    def from_stage(cls, stage: StageParams) -> "ShearMap":
        return cls(StepProfile.from_stage(stage), stage.q)

    @property
    def min_width(self) -> float:
        return float(self.profile.eps) / self.profile.a

    def displacement_jet(self, r, order: int = 1):
        jet, flat = self.profile.torus_jet(r, order)
        return self.sign * jet, flat

    def _eval(self, theta, r):
        jet, flat = self.displacement_jet(r, 1)
        d = identity_derivs(theta.size)
        d[:, 0, 1] = jet[:, 1]
        return Batch(wrap01(theta + jet[:, 0]), r.copy(), d, flat)

    def inverse(self):
        return ShearMap(self.profile, self.q, -self.sign)


def shear_eval(g: ShearMap, p: TorusPoint) -> PartialMapResult:
    from .maps import eval_jet
    return eval_jet(g, p)


# ---------------------------------------------------------------- type A

class TypeAMap(TorusMap):
    """Digit permutation of the finest cells: a translation on each good cell.

    A good cell with digits (u0, u1, u2, u3, u4; v0, v1, v2) is translated onto the
    cell (u0, u1, k^5 - v0 - 1, u3, u4; u2, v1, v2).  Points outside good cells are
    left fixed and tagged TRANSITION.
    """

    def __init__(self, stage: StageParams, inverse: bool = False):
        self.stage = stage
        self.geom = Geometry(stage)
        self.lam = stage.phiA_lambda
        self.mu = stage.phiA_mu
        self.eps = stage.phiA_eps
        self.eps2 = stage.phiA_eps2
        self.is_inverse = inverse
        self.name = "phiA^-1" if inverse else "phiA"

    @property
    def min_width(self) -> float:
        return float(self.geom.finest_width(Level.ZETA))

    def translation(self, u2, v0):
        """(dtheta, dr) for a cell with the given (u2, v0); works on ints or arrays."""
        g = self.geom
        return (g.K5 - v0 - 1 - u2) / (2 * g.k**6 * g.q), (u2 - v0) / g.K5

    def _eval(self, theta, r):
        loc = locate_batch(self.stage, Level.ZETA, theta, r)
        good = loc["valid"]
        u2, v0 = loc["u2"], loc["v0"]
        if self.is_inverse:
            # the image cell (u2', v0') came from (u2, v0) = (v0', K5 - 1 - u2')
            u2, v0 = v0, self.geom.K5 - 1 - u2
            dth, dr = self.translation(u2, v0)
            dth, dr = -dth, -dr
        else:
            dth, dr = self.translation(u2, v0)
        dth = np.where(good, dth, 0.0)
        dr = np.where(good, dr, 0.0)
        return Batch(wrap01(theta + dth), wrap01(r + dr), identity_derivs(theta.size), good)

    def eval_exact(self, theta: Fraction, r: Fraction):
        """Exact-rational evaluation: returns ((theta', r'), tag)."""
        g = self.geom
        theta, r = Fraction(theta) % 1, Fraction(r) % 1
        ui, fu = _split_exact(theta, g.U)
        vi, fv = _split_exact(r, g.U)
        d = _digits_from_ints(g, ui, vi)
        ok = (g.margin <= fu <= 1 - g.margin) and (g.margin <= fv <= 1 - g.margin) \
            and bool(_digits_valid(g, d))
        if not ok:
            return (theta, r), Tag.TRANSITION
        u2, v0 = d[2], d[5]
        if self.is_inverse:
            u2, v0 = v0, g.K5 - 1 - u2
            sgn = -1
        else:
            sgn = 1
        dth = Fraction(g.K5 - v0 - 1 - u2, 2 * g.k**6 * g.q)
        dr = Fraction(u2 - v0, g.K5)
        return ((theta + sgn * dth) % 1, (r + sgn * dr) % 1), Tag.GOOD

    def inverse(self):
        return TypeAMap(self.stage, not self.is_inverse)


def typeA_eval(m: TypeAMap, stage: StageParams, p: TorusPoint) -> PartialMapResult:
    if isinstance(p.theta, Fraction) and isinstance(p.r, Fraction):
        (th, r), tag = m.eval_exact(p.theta, p.r)
        return PartialMapResult(Jet(TorusPoint(th, r), np.eye(2)), tag)
    from .maps import eval_jet
    return eval_jet(m, p)


def typeA_index_image(k5: int, u2: int, v0: int) -> tuple:
    """Image of the (u2, v0) digit pair under the cell permutation."""
    return k5 - v0 - 1, u2


# ---------------------------------------------------------------- type B

class TypeBMap(TorusMap):
    """Radial twist on each square block: rotation by ``beta`` on the inner disc.

    Blocks have side ``1/rot_cells``.  In block units the point at offset ``d``
    from the block center goes to ``Rot(omega(|d|)) d`` where ``omega = beta`` for
    ``|d| <= R1`` and ``0`` for ``|d| >= R2``.  The angle ``beta = u1 pi / k`` is set
    by the column of width ``1/rot_cols`` containing the block (u1 = column mod k).
    Radial twists preserve area exactly.
    """

    smooth_everywhere = True

    def __init__(self, rot_cols: int, rot_cells: int, k: int, r1: float = DEFAULT_R1,
                 r2: float = DEFAULT_R2, sign: int = 1, rot_eps: Optional[Fraction] = None):
        if rot_cells % rot_cols:
            raise AbcError("CONFIG", "rot_cells must be a multiple of rot_cols")
        if not (0 < r1 < r2 <= 0.5):
            raise AbcError("CONFIG", "need 0 < R1 < R2 <= 1/2")
        self.rot_cols, self.rot_cells, self.k = rot_cols, rot_cells, k
        self.r1, self.r2, self.sign = float(r1), float(r2), sign
        self.rot_eps = rot_eps
        self.per_col = rot_cells // rot_cols
        self.name = "i" if sign == 1 else "i^-1"

    @classmethod
    def from_stage(cls, stage: StageParams, r1: float = DEFAULT_R1, r2: float = DEFAULT_R2):
        return cls(stage.rot_cols, stage.rot_cells, stage.k, r1, r2, rot_eps=stage.rot_eps)

    @property
    def min_width(self) -> float:
        return (self.r2 - self.r1) / self.rot_cells

    def beta(self, ci):
        return ((ci // self.per_col) % self.k) * (np.pi / self.k)

    def local(self, theta, r):
        """Block indices, offsets from the block center (block units) and radius."""
        A = float(self.rot_cells)
        x, y = theta * A, r * A
        ci, cj = np.floor(x), np.floor(y)
        dx, dy = x - ci - 0.5, y - cj - 0.5
        return ci.astype(np.int64), cj.astype(np.int64), dx, dy, np.hypot(dx, dy)

    def omega_jet(self, s, beta):
        w = self.r2 - self.r1
        arg = 2.0 * (s - self.r1) / w - 1.0
        rj = rho_jet(arg, 1)
        om = beta * (1.0 - rj[..., 0])
        dom = -beta * rj[..., 1] * (2.0 / w)
        return self.sign * om, self.sign * dom

    def _eval(self, theta, r):
        A = float(self.rot_cells)
        ci, cj, dx, dy, s = self.local(theta, r)
        beta = self.beta(ci)
        om, dom = self.omega_jet(s, beta)
        c, sn = np.cos(om), np.sin(om)
        nx, ny = c * dx - sn * dy, sn * dx + c * dy
        d = rotation_matrices(om)
        trans = (s > self.r1) & (s < self.r2)
        if np.any(trans):
            st = s[trans]
            # d/dd of Rot(omega(|d|)) d = Rot(omega) + omega' (Rot(omega + pi/2) d) d^T / |d|
            px, py = -ny[trans], nx[trans]
            gx, gy = dx[trans] / st, dy[trans] / st
            dd = dom[trans]
            d[trans, 0, 0] += dd * px * gx
            d[trans, 0, 1] += dd * px * gy
            d[trans, 1, 0] += dd * py * gx
            d[trans, 1, 1] += dd * py * gy
        th = wrap01((ci + 0.5 + nx) / A)
        rr = wrap01((cj + 0.5 + ny) / A)
        return Batch(th, rr, d, ~trans)

    def inverse(self):
        return TypeBMap(self.rot_cols, self.rot_cells, self.k, self.r1, self.r2, -self.sign,
                        self.rot_eps)

    def plateau(self, theta, r):
        return self.local(theta, r)[4] <= self.r1

    def probe_points(self, grid: int):
        """A dense grid over one block per twist angle, for derivative maxima."""
        A = float(self.rot_cells)
        off = (np.arange(grid) + 0.5) / grid
        ox, oy = np.meshgrid(off, off, indexing="ij")
        ths, rs = [], []
        for u1 in range(self.k):
            ci = u1 * self.per_col
            ths.append((ci + ox.ravel()) / A)
            rs.append(oy.ravel() / A)
        return np.concatenate(ths), np.concatenate(rs)


def typeB_eval(m: TypeBMap, stage: StageParams, p: TorusPoint) -> PartialMapResult:
    from .maps import eval_jet
    return eval_jet(m, p)


# ---------------------------------------------------------------- assembled pieces

class PhiMap(TorusMap):
    """Identity on odd half-columns, block twist after digit permutation on even ones.

    A point counts as GOOD only when the permutation is exact there and the twist
    acts on it as the rigid rotation, i.e. its image lies in the inner disc.
    """

    def __init__(self, stage: StageParams, type_a: TypeAMap, type_b: TypeBMap,
                 inverse: bool = False):
        self.stage, self.type_a, self.type_b = stage, type_a, type_b
        self.is_inverse = inverse
        self.name = "phi^-1" if inverse else "phi"
        self.exact_inverse = True

    @property
    def min_width(self) -> float:
        return min(self.type_a.min_width, self.type_b.min_width)

    def _eval(self, theta, r):
        n = theta.size
        u0 = np.floor(theta * 2 * self.stage.q).astype(np.int64)
        even = (u0 % 2) == 0
        th, rr = theta.copy(), r.copy()
        d = identity_derivs(n)
        good = np.ones(n, dtype=bool)
        if np.any(even):
            te, re = theta[even], r[even]
            if not self.is_inverse:
                first = self.type_a._eval(te, re)
                second = self.type_b._eval(first.theta, first.r)
                disc = self.type_b.plateau(first.theta, first.r)
                perm_good = first.good
            else:
                disc = self.type_b.plateau(te, re)
                first = self.type_b.inverse()._eval(te, re)
                second = self.type_a.inverse()._eval(first.theta, first.r)
                perm_good = second.good
            th[even], rr[even] = second.theta, second.r
            d[even] = np.matmul(second.deriv, first.deriv)
            good[even] = perm_good & disc
        return Batch(th, rr, d, good)

    def inverse(self):
        return PhiMap(self.stage, self.type_a, self.type_b, not self.is_inverse)


class AlignedRotation(TorusMap):
    """Rotation by ``shift`` whose good domain tracks a nominal column offset.

    With ``cols`` columns of width ``1/cols``, a point is GOOD when its image column
    equals its own column plus ``nominal * cols`` (mod ``cols``).
    """

    smooth_everywhere = True

    def __init__(self, shift: Fraction, nominal: Fraction, cols: int):
        self.shift, self.nominal, self.cols = Fraction(shift), Fraction(nominal), cols
        off = self.nominal * cols
        if off.denominator != 1:
            raise AbcError("INCONSISTENT_PARAMS", "nominal shift is not a whole number of columns")
        self.offset = int(off) % cols
        self.name = f"R^m[{self.shift}]"

    def _eval(self, theta, r):
        th = wrap01(theta + float(self.shift))
        c0 = np.floor(theta * self.cols).astype(np.int64)
        c1 = np.floor(th * self.cols).astype(np.int64)
        good = ((c0 + self.offset) % self.cols) == (c1 % self.cols)
        return Batch(th, r.copy(), identity_derivs(theta.size), good)

    def inverse(self):
        return AlignedRotation(-self.shift, -self.nominal, self.cols)


@dataclass
class AssembledStage:
    stage: StageParams
    alpha_next: Fraction
    mixing: MixingTime
    g: ShearMap
    type_a: TypeAMap
    type_b: TypeBMap
    phi: PhiMap
    h: TorusMap
    H: TorusMap
    f: TorusMap
    Phi: TorusMap
    prev: Optional["AssembledStage"] = None

    @property
    def phi_inv(self):
        return self.phi.inverse()

    @property
    def h_inv(self):
        return self.h.inverse()

    @property
    def H_inv(self):
        return self.H.inverse()


def assemble_stage(stage: StageParams, alpha_next: Fraction, m: MixingTime,
                   prev: Optional[AssembledStage] = None, r1: float = DEFAULT_R1,
                   r2: float = DEFAULT_R2) -> AssembledStage:
    alpha_next = Fraction(alpha_next) % 1
    _, q_next, _ = next_alpha(stage)
    if alpha_next.denominator != q_next:
        raise AbcError("INCONSISTENT_PARAMS",
                       f"alpha_next denominator {alpha_next.denominator} != {q_next}")
    g = ShearMap.from_stage(stage)
    ta = TypeAMap(stage)
    tb = TypeBMap.from_stage(stage, r1, r2)
    phi = PhiMap(stage, ta, tb)
    h = Compose(g, phi, name=f"h{stage.n}")
    H = h if prev is None else Compose(prev.H, h, name=f"H{stage.n}")
    f = Compose(H, Rotation(alpha_next), H.inverse(), name=f"f{stage.n}")
    shift = (m.m * alpha_next) % 1
    nominal = (m.m * alpha_next - m.frak_a) % 1
    rot = AlignedRotation(shift, nominal, stage.rot_cols)
    Phi = Compose(phi, rot, phi.inverse(), name=f"Phi{stage.n}")
    return AssembledStage(stage, alpha_next, m, g, ta, tb, phi, h, H, f, Phi, prev)


def build_stages(stages, r1: float = DEFAULT_R1, r2: float = DEFAULT_R2) -> list[AssembledStage]:
    """Assemble a chain of stages using the scheduler's rotation numbers and mixing times."""
    from .scheduler import mixing_time
    out, prev = [], None
    for st in stages:
        alpha, q_next, p_next = next_alpha(st)
        mt = mixing_time(st.q, q_next, p_next)
        prev = assemble_stage(st, alpha, mt, prev, r1, r2)
        out.append(prev)
    return out


def shift_law_expected(u0, u1, k: int, which: str = "phi"):
    """Fiber-index shift of the projectivized map on a GOOD point of column (u0, u1).

    ``phi`` rotates by ``u1 pi/k`` on even half-columns and fixes odd ones.  For the
    mixing map the rotation enters with sign +1 from odd half-columns and -1 from
    even ones (its inverse is applied there first).
    """
    u0 = np.asarray(u0)
    u1 = np.asarray(u1)
    even = (u0 % 2) == 0
    if which == "phi":
        return np.where(even, u1, 0) % k
    return np.where(even, -u1, u1) % k

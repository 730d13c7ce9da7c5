"""Torus maps with derivative transport, composition, inversion and the projective action.

Every map evaluates vectorized over numpy arrays of points and returns the image,
the 2x2 derivative at each point and a boolean mask saying whether the point lay
in the map's good domain (where the closed form is exact).  Single-point helpers
wrap the batch path.

The fiber coordinate of the projectivized bundle is normalized as ``t = phi/pi``
so that a rotation by ``s*pi/k`` shifts ``t`` by exactly ``s/k``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import AbcError

FLOAT_MIN_WIDTH = 2.0**-40
SINGULAR_DET = 1e-12


def wrap01(x):
    """Reduce mod 1 into [0, 1), guarding against ``np.mod`` returning 1.0."""
    y = np.mod(x, 1.0)
    return np.where(y >= 1.0, 0.0, y)


def circle_dist(x, y):
    """Distance on R/Z."""
    d = np.abs(np.mod(np.asarray(x) - np.asarray(y), 1.0))
    return np.minimum(d, 1.0 - d)


def signed_diff(x, y):
    """Representative of ``x - y`` mod 1 in [-1/2, 1/2)."""
    return np.mod(np.asarray(x) - np.asarray(y) + 0.5, 1.0) - 0.5


class Tag(enum.Enum):
    GOOD = "GOOD"
    TRANSITION = "TRANSITION"


@dataclass(frozen=True)
class TorusPoint:
    theta: float
    r: float

    def __post_init__(self):
        if isinstance(self.theta, Fraction):
            object.__setattr__(self, "theta", self.theta % 1)
        else:
            object.__setattr__(self, "theta", float(wrap01(float(self.theta))))
        if isinstance(self.r, Fraction):
            object.__setattr__(self, "r", self.r % 1)
        else:
            object.__setattr__(self, "r", float(wrap01(float(self.r))))


@dataclass(frozen=True)
class ProjPoint:
    point: TorusPoint
    t: float

    def __post_init__(self):
        object.__setattr__(self, "t", float(wrap01(float(self.t))))


@dataclass(frozen=True)
class Jet:
    point: TorusPoint
    deriv: np.ndarray


@dataclass(frozen=True)
class PartialMapResult:
    jet: Jet
    tag: Tag


@dataclass
class Batch:
    """Vectorized evaluation result."""

    theta: np.ndarray
    r: np.ndarray
    deriv: np.ndarray  # shape (N, 2, 2)
    good: np.ndarray  # bool, shape (N,)


def identity_derivs(n: int) -> np.ndarray:
    out = np.zeros((n, 2, 2))
    out[:, 0, 0] = 1.0
    out[:, 1, 1] = 1.0
    return out


def rotation_matrices(angle) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    out = np.empty(angle.shape + (2, 2))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


class TorusMap:
    """Base class of every map node.

    Subclasses implement ``_eval`` and ``inverse``; ``min_width`` is the smallest
    length scale the closed form resolves (used for the float underflow guard).
    """

    name = "map"
    exact_inverse = True
    # True when the closed-form derivative is exact everywhere, not only on GOOD points
    smooth_everywhere = False

    @property
    def min_width(self) -> float:
        return 1.0

    def _eval(self, theta: np.ndarray, r: np.ndarray) -> Batch:
        raise NotImplementedError

    def inverse(self) -> "TorusMap":
        raise NotImplementedError

    def check_numeric(self) -> None:
        if self.min_width < FLOAT_MIN_WIDTH:
            raise AbcError(
                "NUMERIC_UNDERFLOW",
                f"{self.name}: a cell width {self.min_width:.3g} is below 2^-40; "
                "use exact indexing mode",
            )

    def eval_batch(self, theta, r) -> Batch:
        self.check_numeric()
        theta = wrap01(np.atleast_1d(np.asarray(theta, dtype=float)))
        r = wrap01(np.atleast_1d(np.asarray(r, dtype=float)))
        return self._eval(theta, r)

    def good_domain(self, theta, r) -> np.ndarray:
        return self.eval_batch(theta, r).good

    def __repr__(self) -> str:
        return self.name


class Identity(TorusMap):
    name = "id"
    smooth_everywhere = True

    def _eval(self, theta, r):
        return Batch(theta.copy(), r.copy(), identity_derivs(theta.size),
                     np.ones(theta.size, dtype=bool))

    def inverse(self):
        return self


class Rotation(TorusMap):
    """``(theta, r) -> (theta + alpha, r)``."""

    smooth_everywhere = True

    def __init__(self, alpha):
        self.alpha = alpha if isinstance(alpha, Fraction) else float(alpha)
        self.name = f"R[{alpha}]"

    def _eval(self, theta, r):
        return Batch(wrap01(theta + float(self.alpha)), r.copy(), identity_derivs(theta.size),
                     np.ones(theta.size, dtype=bool))

    def inverse(self):
        return Rotation(-self.alpha)


class Compose(TorusMap):
    """``Compose(A, B, C)`` is ``A o B o C``: C acts first."""

    def __init__(self, *factors: TorusMap, name: str | None = None):
        flat = []
        for f in factors:
            flat.append(f)
        if not flat:
            flat = [Identity()]
        self.factors = tuple(flat)
        self.name = name or "(" + " o ".join(f.name for f in self.factors) + ")"
        self.exact_inverse = all(f.exact_inverse for f in self.factors)
        self.smooth_everywhere = all(f.smooth_everywhere for f in self.factors)

    @property
    def min_width(self) -> float:
        return min(f.min_width for f in self.factors)

    def _eval(self, theta, r):
        deriv = identity_derivs(theta.size)
        good = np.ones(theta.size, dtype=bool)
        for f in reversed(self.factors):
            out = f._eval(theta, r)
            deriv = np.matmul(out.deriv, deriv)
            good &= out.good
            theta, r = out.theta, out.r
        return Batch(theta, r, deriv, good)

    def inverse(self):
        return Compose(*[f.inverse() for f in reversed(self.factors)],
                       name=f"inv{self.name}")


def rotate(alpha, p: TorusPoint) -> TorusPoint:
    """Rotate a point in the theta direction; exact when both are Fractions."""
    if isinstance(alpha, Fraction) and isinstance(p.theta, Fraction):
        return TorusPoint((p.theta + alpha) % 1, p.r)
    return TorusPoint(float(wrap01(p.theta + float(alpha))), p.r)


def eval_jet(expr: TorusMap, p: TorusPoint) -> PartialMapResult:
    out = expr.eval_batch([float(p.theta)], [float(p.r)])
    jet = Jet(TorusPoint(float(out.theta[0]), float(out.r[0])), out.deriv[0].copy())
    return PartialMapResult(jet, Tag.GOOD if bool(out.good[0]) else Tag.TRANSITION)


def projectivize_batch(deriv: np.ndarray, t) -> np.ndarray:
    """Action of derivative matrices on normalized fiber coordinates."""
    deriv = np.asarray(deriv, dtype=float)
    t = np.asarray(t, dtype=float)
    det = deriv[..., 0, 0] * deriv[..., 1, 1] - deriv[..., 0, 1] * deriv[..., 1, 0]
    if np.any(np.abs(det) < SINGULAR_DET):
        raise AbcError("SINGULAR_DERIV", "derivative with |det| < 1e-12")
    vx, vy = np.cos(np.pi * t), np.sin(np.pi * t)
    wx = deriv[..., 0, 0] * vx + deriv[..., 0, 1] * vy
    wy = deriv[..., 1, 0] * vx + deriv[..., 1, 1] * vy
    return wrap01(np.arctan2(wy, wx) / np.pi)


def projectivize(j: Jet, t: float) -> float:
    return float(projectivize_batch(j.deriv, t))


def eval_proj_batch(expr: TorusMap, theta, r, t):
    """Evaluate ``(f, df)`` on the projectivized bundle; returns (Batch, t_image)."""
    out = expr.eval_batch(theta, r)
    return out, projectivize_batch(out.deriv, t)


def _fd_matrix(expr: TorusMap, theta: float, r: float, h: float):
    base = expr.eval_batch([theta, theta + h, theta - h, theta, theta],
                           [r, r, r, r + h, r - h])
    fd = np.empty((2, 2))
    fd[0, 0] = signed_diff(base.theta[1], base.theta[2]) / (2 * h)
    fd[1, 0] = signed_diff(base.r[1], base.r[2]) / (2 * h)
    fd[0, 1] = signed_diff(base.theta[3], base.theta[4]) / (2 * h)
    fd[1, 1] = signed_diff(base.r[3], base.r[4]) / (2 * h)
    return base, fd


def jacobian_fd_check(expr: TorusMap, p: TorusPoint, h: float = 1e-5,
                      require_collar_free: bool = True) -> float:
    """Max entrywise error between the analytic derivative and central differences.

    The error of each entry is divided by ``max(1, max |analytic entry|)`` so that
    zero entries are measured absolutely.
    """
    theta, r = float(p.theta), float(p.r)
    if require_collar_free:
        probe = expr.eval_batch(
            [theta, theta + h, theta - h, theta + 2 * h, theta - 2 * h, theta, theta, theta, theta],
            [r, r, r, r, r, r + h, r - h, r + 2 * h, r - 2 * h])
        if not np.all(probe.good):
            raise AbcError("IN_TRANSITION", f"stencil at ({theta}, {r}) meets a collar")
    base, fd = _fd_matrix(expr, theta, r, h)
    an = base.deriv[0]
    scale = max(1.0, float(np.max(np.abs(an))))
    return float(np.max(np.abs(fd - an)) / scale)


def jacobian_fd_batch(expr: TorusMap, theta, r, h: float = 1e-5,
                      require_collar_free: bool = True):
    """Vectorized :func:`jacobian_fd_check`; returns (errors, usable mask).

    With ``require_collar_free`` a point is usable only when its whole stencil,
    out to distance ``2h``, is GOOD.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    offs = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (2, 0), (-2, 0), (0, 2), (0, -2)]
    ev = [expr.eval_batch(theta + a * h, r + b * h) for a, b in offs]
    usable = np.ones(theta.size, dtype=bool)
    if require_collar_free:
        for e in ev:
            usable &= e.good
    fd = np.empty((theta.size, 2, 2))
    fd[:, 0, 0] = signed_diff(ev[1].theta, ev[2].theta) / (2 * h)
    fd[:, 1, 0] = signed_diff(ev[1].r, ev[2].r) / (2 * h)
    fd[:, 0, 1] = signed_diff(ev[3].theta, ev[4].theta) / (2 * h)
    fd[:, 1, 1] = signed_diff(ev[3].r, ev[4].r) / (2 * h)
    an = ev[0].deriv
    scale = np.maximum(1.0, np.max(np.abs(an), axis=(1, 2)))
    return np.max(np.abs(fd - an), axis=(1, 2)) / scale, usable


def det2(deriv: np.ndarray) -> np.ndarray:
    return deriv[..., 0, 0] * deriv[..., 1, 1] - deriv[..., 0, 1] * deriv[..., 1, 0]


def as_arrays(points: Sequence[TorusPoint]):
    return (np.array([float(p.theta) for p in points]), np.array([float(p.r) for p in points]))

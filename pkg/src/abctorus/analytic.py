"""Trigonometric approximation of the shear profile and the resulting entire shears.

A :class:`TrigProfile` is ``c_0 + sum_m c_m cos(2 pi m x) + s_m sin(2 pi m x)``.
Coefficients come from the trapezoidal rule (an rfft) on a node count that is
doubled until successive coefficient vectors agree.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .conjugation import StepProfile
from .errors import AbcError
from .maps import Batch, TorusMap, circle_dist, identity_derivs, wrap01

MAX_NODES = 2**22
COEF_TOL = 1e-10
_EXP_LIMIT = 700.0


class Scheme(enum.Enum):
    FEJER = "FEJER"
    TRUNCATION = "TRUNCATION"


@dataclass(frozen=True)
class TrigProfile:
    c: np.ndarray  # cosine coefficients, index m = 0..N
    s: np.ndarray  # sine coefficients, s[0] = 0
    quad_nodes: int = 0
    quad_change: float = 0.0
    tail_energy: float = 0.0

    @property
    def degree(self) -> int:
        return len(self.c) - 1

    def jet(self, x, order: int = 0) -> np.ndarray:
        """Derivatives ``f^(i)(x)`` for ``i = 0..order``."""
        x = np.asarray(x, dtype=float)
        m = np.arange(self.degree + 1)
        w = 2 * np.pi * m
        ph = np.outer(x.ravel(), w)
        cos, sin = np.cos(ph), np.sin(ph)
        out = np.empty((x.size, order + 1))
        for i in range(order + 1):
            # d^i/dx^i cos(wx) = w^i cos(wx + i pi/2)
            ci, si = self._rotated(i, cos, sin)
            out[:, i] = (ci * (self.c * w**i)).sum(axis=1) + (si * (self.s * w**i)).sum(axis=1)
        return out.reshape(x.shape + (order + 1,))

    @staticmethod
    def _rotated(i, cos, sin):
        k = i % 4
        if k == 0:
            return cos, sin
        if k == 1:
            return -sin, cos
        if k == 2:
            return -cos, -sin
        return sin, -cos

    def __call__(self, x):
        return self.jet(x, 0)[..., 0]

    def eval_complex(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        m = np.arange(self.degree + 1)
        arg = 2 * np.pi * np.outer(z.ravel(), m)
        out = (np.cos(arg) * self.c).sum(axis=1) + (np.sin(arg) * self.s).sum(axis=1)
        return out.reshape(z.shape)


def trig_from_coefficients(c: Sequence[float], s: Sequence[float]) -> TrigProfile:
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    n = max(len(c), len(s))
    cc, ss = np.zeros(n), np.zeros(n)
    cc[: len(c)] = c
    ss[: len(s)] = s
    ss[0] = 0.0
    return TrigProfile(cc, ss)


def _coefficients(f: Callable, nodes: int, upto: int):
    x = np.arange(nodes) / nodes
    spectrum = np.fft.rfft(f(x)) / nodes
    m = min(upto, nodes // 2 - 1)
    c = np.zeros(upto + 1)
    s = np.zeros(upto + 1)
    c[0] = spectrum[0].real
    c[1: m + 1] = 2 * spectrum[1: m + 1].real
    s[1: m + 1] = -2 * spectrum[1: m + 1].imag
    return c, s, spectrum


def _target(sp) -> Callable:
    if isinstance(sp, StepProfile):
        return lambda x: sp.torus_jet(x, 0)[0][..., 0]
    if isinstance(sp, TrigProfile):
        return sp
    if callable(sp):
        return sp
    raise AbcError("USAGE", "profile must be a StepProfile, TrigProfile or callable")


def _min_nodes(sp) -> int:
    if isinstance(sp, StepProfile):
        # resolve each transition (width 4 eps / a) by at least 16 nodes
        return int(2 ** math.ceil(math.log2(4.0 * sp.a / float(sp.eps))))
    if isinstance(sp, TrigProfile):
        return 4 * (sp.degree + 1)
    return 64


def approximate_profile(sp, degree: int, scheme: Scheme | str = Scheme.FEJER,
                        tol: float = COEF_TOL, max_nodes: int = MAX_NODES) -> TrigProfile:
    """Degree-N Fejer mean or sharp truncation of the Fourier series of ``sp``.

    ``sp`` may be a :class:`StepProfile` (its periodized torus profile is used), a
    :class:`TrigProfile`, or any vectorized 1-periodic callable.
    """
    scheme = Scheme(scheme) if not isinstance(scheme, Scheme) else scheme
    if degree < 0:
        raise AbcError("CONFIG", "degree must be >= 0")
    f = _target(sp)
    nodes = max(8 * max(degree, 1), 64, min(_min_nodes(sp), max_nodes))
    nodes = 2 ** math.ceil(math.log2(nodes))
    c, s, _ = _coefficients(f, nodes, degree)
    change = math.inf
    while True:
        nxt = 2 * nodes
        if nxt > max_nodes:
            break
        c2, s2, spectrum = _coefficients(f, nxt, degree)
        change = float(max(np.max(np.abs(c2 - c)), np.max(np.abs(s2 - s))))
        c, s, nodes = c2, s2, nxt
        if change <= tol:
            break
    if change > tol:
        raise AbcError("QUADRATURE_UNCONVERGED",
                       f"coefficient change {change:.3g} > {tol:.1g} at {nodes} nodes")
    # energy of the last octave above the degree: a truncation-tail indicator
    _, _, spectrum = _coefficients(f, nodes, degree)
    hi = spectrum[degree + 1: 2 * degree + 2]
    tail = float(2 * np.sum(np.abs(hi) ** 2))
    if scheme == Scheme.FEJER:
        w = 1.0 - np.arange(degree + 1) / (degree + 1)
        c, s = c * w, s * w
    return TrigProfile(c, s, nodes, change, tail)


def strip_norm(tp: TrigProfile, rho: float, allow_inf: bool = False) -> float:
    """Upper bound ``sum_m (|c_m| + |s_m|) e^{2 pi m rho}`` of the sup on the strip."""
    m = np.arange(tp.degree + 1)
    expo = 2 * np.pi * m * rho
    mask = (np.abs(tp.c) + np.abs(tp.s)) > 0
    if np.any(expo[mask] > _EXP_LIMIT):
        if allow_inf:
            return math.inf
        raise AbcError("OVERFLOW", f"strip width {rho} too large for degree {tp.degree}")
    return float(np.sum((np.abs(tp.c) + np.abs(tp.s)) * np.exp(expo)))


def periodic_rescale(tp: TrigProfile, q: int) -> TrigProfile:
    """Profile of ``x -> f(q x)/q``: frequencies dilated by q, amplitudes divided by q."""
    if q < 1:
        raise AbcError("CONFIG", "q must be >= 1")
    n = tp.degree * q + 1
    c, s = np.zeros(n), np.zeros(n)
    c[::q] = tp.c / q
    s[::q] = tp.s / q
    return TrigProfile(c, s, tp.quad_nodes, tp.quad_change, tp.tail_energy / q**2)


class AnalyticShear(TorusMap):
    """Entire shear ``(theta, r) -> (theta + f(r), r)`` for a trigonometric ``f``."""

    smooth_everywhere = True

    def __init__(self, profile: TrigProfile, q: int = 1, sign: int = 1):
        self.profile, self.q, self.sign = profile, q, sign
        self.name = f"g_hat[N={profile.degree}]" + ("" if sign == 1 else "^-1")

    def displacement_jet(self, r, order: int = 1):
        jet = self.sign * self.profile.jet(r, order)
        return jet, np.ones(np.shape(r), dtype=bool)

    def _eval(self, theta, r):
        jet, _ = self.displacement_jet(r, 1)
        d = identity_derivs(theta.size)
        d[:, 0, 1] = jet[:, 1]
        return Batch(wrap01(theta + jet[:, 0]), r.copy(), d, np.ones(theta.size, dtype=bool))

    def inverse(self):
        return AnalyticShear(self.profile, self.q, -self.sign)

    def commutes_with_period(self) -> bool:
        """True when only frequencies divisible by q are present."""
        nz = np.nonzero((self.profile.c != 0) | (self.profile.s != 0))[0]
        return bool(np.all(nz % self.q == 0))


@dataclass
class ApproxReport:
    target: str
    degree: int
    d0: float
    d1: float
    d2: float
    grid: int
    strip_norms: dict = field(default_factory=dict)
    epsilon_target: Optional[Fraction] = None
    satisfied: Optional[bool] = None
    note: str = ""

    def to_json(self) -> dict:
        from .scheduler import fmt_rational
        return {"target": self.target, "degree": self.degree, "d0": self.d0, "d1": self.d1,
                "d2": self.d2, "grid": self.grid,
                "strip_norms": {str(k): v for k, v in self.strip_norms.items()},
                "epsilon_target": None if self.epsilon_target is None
                else fmt_rational(self.epsilon_target),
                "satisfied": self.satisfied, "note": self.note}


def distance_report(smooth, analytic, grid: int = 4096, eps_target=None,
                    rhos: Sequence[float] = (0.001, 0.01)) -> ApproxReport:
    """Grid distances between two shears through their displacement derivatives.

    ``d0`` is the circle distance of the displacements, ``d1`` and ``d2`` the sup
    differences of the first and second derivatives (closed forms on both sides).
    A staircase is also sampled densely across each of its transitions.
    """
    if grid < 64:
        raise AbcError("CONFIG", "grid must be >= 64")
    x = np.arange(grid) / grid
    prof_s = getattr(smooth, "profile", None)
    if isinstance(prof_s, StepProfile):
        # steps and the wrap collar are narrower than the grid: sample each densely
        half = 2 * float(prof_s.eps) / prof_s.a
        s = np.linspace(-half, half, grid // 2 + 1)
        centers = np.arange(prof_s.a + 1) / prof_s.a
        x = np.concatenate([x, np.mod(centers[:, None] + s[None, :], 1.0).ravel()])
    a, _ = smooth.displacement_jet(x, 2)
    b, _ = analytic.displacement_jet(x, 2)
    d0 = float(np.max(circle_dist(a[:, 0], b[:, 0])))
    d1 = float(np.max(np.abs(a[:, 1] - b[:, 1])))
    d2 = float(np.max(np.abs(a[:, 2] - b[:, 2])))
    norms = {}
    prof = getattr(analytic, "profile", None)
    if isinstance(prof, TrigProfile):
        for rho in rhos:
            norms[rho] = strip_norm(prof, rho, allow_inf=True)
    sat = None
    note = ""
    if eps_target is not None:
        eps = float(eps_target)
        sat = max(d0, d1, d2) < eps
        if eps < 1e-15:
            note = "target below double precision resolution; verdict is formal"
    return ApproxReport(getattr(smooth, "name", "smooth"),
                        prof.degree if isinstance(prof, TrigProfile) else -1,
                        d0, d1, d2, grid, norms,
                        None if eps_target is None else Fraction(eps_target), sat, note)

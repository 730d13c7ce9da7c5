"""Exact bookkeeping of the stage parameters, growth conditions and mixing times.

Everything here works with :class:`fractions.Fraction` and Python integers, so
the rational quantities (rotation numbers, cell widths, bounds) are exact.
Quantities that depend on norms of the conjugation maps can only be estimated;
they are passed in explicitly and every condition that uses one is reported as
estimate-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from fractions import Fraction
from math import gcd
from typing import Iterable, Mapping, Optional, Sequence

from .errors import AbcError

CONDITION_NAMES = ("P1", "P2", "P3", "P4", "ALPHA_CLOSENESS")


def fmt_rational(x) -> str:
    """Render an exact rational as ``"num/den"``; floats pass through ``repr``."""
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, int):
        return f"{x}/1"
    return repr(float(x))


def parse_rational(text) -> Fraction:
    """Parse ``"num/den"``, an integer, or a decimal string into a Fraction."""
    if isinstance(text, Fraction):
        return text
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, float):
        return Fraction(text).limit_denominator(10**12)
    return Fraction(str(text).strip())


def integer_root(x: int, t: int) -> int:
    """Largest integer ``m >= 0`` with ``m**t <= x``."""
    if x < 0 or t < 1:
        raise ValueError("integer_root needs x >= 0 and t >= 1")
    if x < 2 or t == 1:
        return x
    m = 1 << ((x.bit_length() + t - 1) // t)  # m**t > x
    while True:
        nxt = ((t - 1) * m + x // m ** (t - 1)) // t
        if nxt >= m:
            break
        m = nxt
    while m**t > x:
        m -= 1
    while (m + 1) ** t <= x:
        m += 1
    return m


def floor_scaled_power(n: int, q: int, sigma: Fraction) -> int:
    """``floor(n * q**sigma)`` decided exactly.

    With ``sigma = s/t`` the inequality ``m <= n q**(s/t)`` is equivalent to
    ``m**t <= n**t q**s`` for ``m >= 0``, so the floor is an integer root.
    """
    s, t = sigma.numerator, sigma.denominator
    if s < 0:
        raise ValueError("sigma must be nonnegative")
    return integer_root(n**t * q**s, t)


@dataclass(frozen=True)
class StageParams:
    n: int
    k: int
    l: int
    q: int
    p: int
    sigma: Fraction
    shear_a: int
    shear_b: int
    shear_eps: Fraction
    rot_cols: int
    rot_cells: int
    rot_grid: int
    rot_eps: Fraction
    phiA_lambda: int
    phiA_mu: int
    phiA_eps: Fraction
    phiA_eps2: Fraction
    approx_d: Fraction
    approx_eps: Fraction
    strict: bool = False
    # norm values that entered approx_eps; (1, 1) are placeholders, not estimates
    approx_inputs: tuple = field(default=(Fraction(1), Fraction(1)))

    @property
    def alpha(self) -> Fraction:
        return Fraction(self.p, self.q)

    def recompute(self) -> "StageParams":
        dH, phi2 = self.approx_inputs
        return derive_stage(self.n, self.k, self.l, self.q, self.p, self.sigma,
                            strict=False, dH_norm=dH, phi_norm2=phi2)

    def check_consistent(self) -> None:
        """Raise INCONSISTENT_PARAMS unless every derived field matches its formula."""
        fresh = self.recompute()
        for f in fields(self):
            if f.name == "strict":
                continue
            if getattr(fresh, f.name) != getattr(self, f.name):
                raise AbcError("INCONSISTENT_PARAMS",
                               f"field {f.name} does not match its defining formula")
        if self.shear_b < 1:
            raise AbcError("INCONSISTENT_PARAMS", "shear_b must be at least 1")

    def to_json(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "approx_inputs":
                out[f.name] = [fmt_rational(x) for x in v]
            elif isinstance(v, Fraction):
                out[f.name] = fmt_rational(v)
            else:
                out[f.name] = v
        return out


def derive_stage(n: int, k: int, l: int, q: int, p: int, sigma, strict: bool = False,
                 dH_norm=Fraction(1), phi_norm2=Fraction(1)) -> StageParams:
    """Build the full parameter record of stage ``n``.

    ``dH_norm`` and ``phi_norm2`` feed only ``approx_eps`` (they stand for the
    sup norm of the derivative of the previous conjugation and the C^2 norm of
    the stage map; 1 is exact for ``dH_norm`` at ``n = 1``).
    """
    sigma = parse_rational(sigma)
    for name, v in (("n", n), ("k", k), ("l", l), ("q", q)):
        if int(v) != v or v < 1:
            raise AbcError("CONFIG", f"{name} must be a positive integer, got {v!r}")
    if not (Fraction(1, 4) < sigma < Fraction(1, 2)):
        raise AbcError("BAD_SIGMA", f"sigma={sigma} is outside (1/4, 1/2)")
    if gcd(p, q) != 1:
        raise AbcError("NON_COPRIME", f"gcd({p}, {q}) = {gcd(p, q)}")
    dH = parse_rational(dH_norm)
    phi2 = parse_rational(phi_norm2)
    approx_d = Fraction(1, 2 ** (n * n + 1) * n * n * l)
    approx_eps = approx_d / (2 * k**8 * q**2 * dH**2 * (2 * phi2 + 1))
    stage = StageParams(
        n=n, k=k, l=l, q=q, p=p, sigma=sigma,
        shear_a=k**5,
        shear_b=floor_scaled_power(n, q, sigma),
        shear_eps=Fraction(1, 2 * n**5 * k**10),
        rot_cols=2 * k * q,
        rot_cells=2 * k**11 * q,
        rot_grid=k**5,
        rot_eps=Fraction(1, 2 * n**5 * k**11),
        phiA_lambda=2 * k * q,
        phiA_mu=k**5,
        phiA_eps=Fraction(1, 2 * k**5),
        phiA_eps2=Fraction(1, 4 * n**5 * k**10),
        approx_d=approx_d,
        approx_eps=approx_eps,
        strict=strict,
        approx_inputs=(dH, phi2),
    )
    if strict:
        stage.check_consistent()
    return stage


def next_alpha(stage: StageParams):
    """Return ``(alpha_next, q_next, p_next)`` with ``alpha_next`` reduced into [0, 1)."""
    lifted = next_alpha_lifted(stage)
    alpha = lifted - (lifted.numerator // lifted.denominator)
    return alpha, alpha.denominator, alpha.numerator


def next_alpha_lifted(stage: StageParams) -> Fraction:
    """``p/q + 1/(k l q^2)`` without reducing mod 1."""
    return Fraction(stage.p, stage.q) + Fraction(1, stage.k * stage.l * stage.q**2)


def build_schedule(ks: Sequence[int], ls: Sequence[int], q1: int, p1: int, sigma,
                   strict: bool = False) -> list[StageParams]:
    """Chain stages 1..N, feeding each stage's next rotation number into the next one."""
    if len(ks) != len(ls) or not ks:
        raise AbcError("CONFIG", "ks and ls must be nonempty and of equal length")
    stages = []
    q, p = q1, p1
    for i, (k, l) in enumerate(zip(ks, ls)):
        st = derive_stage(i + 1, k, l, q, p, sigma, strict=strict)
        stages.append(st)
        _, q, p = next_alpha(st)
    return stages


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    satisfied: bool
    lhs: object
    rhs: object
    exact: bool
    note: str = ""
    parts: tuple = ()

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "satisfied": self.satisfied,
            "lhs": fmt_rational(self.lhs),
            "rhs": fmt_rational(self.rhs),
            "exact": self.exact,
            "note": self.note,
            "parts": [p.to_json() for p in self.parts],
        }


@dataclass(frozen=True)
class ConditionReport:
    n: int
    entries: tuple

    def entry(self, name: str) -> ConditionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_json(self) -> dict:
        return {"n": self.n, "conditions": [e.to_json() for e in self.entries]}


def _need(est: Mapping, key: str, n: int, why: str):
    if key not in est or est[key] is None:
        raise AbcError("MISSING_ESTIMATE", f"stage {n}: {why} needs estimate '{key}'")
    return est[key]


def check_conditions(stages: Sequence[StageParams],
                     norm_estimates: Optional[Mapping[int, Mapping]] = None,
                     limit_alpha: Optional[Fraction] = None) -> list[ConditionReport]:
    """Evaluate the five growth conditions for every stage.

    ``norm_estimates[n]`` may hold:

    * ``dH_prev``: sup norm of the derivative of the previous conjugation
      (needed for ``n >= 2``; the identity gives exactly 1 at ``n = 1``),
    * ``lip_prev``: Lipschitz estimate of the projectivized previous conjugation
      (diameter clause of P1, ``n >= 2``),
    * ``H_norm``: the C^r norm of the current conjugation at order ``r_next``,
    * ``C_hat``: the composition constant, ``r`` and ``r_next``: orders.

    The limit rotation number is unknown for a finite schedule; by default the
    last available rotation number stands in for it and the closeness condition
    is flagged as an estimate.
    """
    norm_estimates = norm_estimates or {}
    stages = list(stages)
    if not stages:
        raise AbcError("USAGE", "no stages given")
    if limit_alpha is None:
        limit_alpha = next_alpha_lifted(stages[-1])
        # lift earlier stages consistently: alpha values live on the same branch
    reports = []
    for idx, st in enumerate(stages):
        n, k, l, q = st.n, st.k, st.l, st.q
        est = norm_estimates.get(n, {})
        entries = []

        # P1
        exact_part = k >= n**5
        if n == 1:
            lip, lip_exact = Fraction(1), True
        else:
            lip, lip_exact = _need(est, "lip_prev", n, "P1 diameter clause"), False
        diam_lhs = Fraction(3, k) * parse_rational(lip)
        diam_rhs = Fraction(1, n * n)
        p1_parts = (
            ConditionEntry("P1.k_growth", exact_part, Fraction(k), Fraction(n**5), True,
                           "k >= n^5"),
            ConditionEntry("P1.diameter", diam_lhs <= diam_rhs, diam_lhs, diam_rhs, lip_exact,
                           "3*Lip/k <= 1/n^2 as a sufficient test"),
        )
        entries.append(ConditionEntry(
            "P1", exact_part and diam_lhs <= diam_rhs, Fraction(k), Fraction(n**5),
            lip_exact, "k >= n^5 and diameter clause", p1_parts))

        # P2: tail sum truncated to the supplied stages
        tail = sum((Fraction(1, s.k**5) for s in stages[idx:]), Fraction(0))
        p2_rhs = Fraction(1, 4 * k**4)
        entries.append(ConditionEntry(
            "P2", tail <= p2_rhs, tail, p2_rhs, False,
            "infinite tail truncated to the supplied stages"))

        # P3: q^(1/4) > 2k  <=>  q > (2k)^4
        p3_rhs = Fraction((2 * k) ** 4)
        entries.append(ConditionEntry(
            "P3", q > p3_rhs, Fraction(q), p3_rhs, True, "q^(1/4) > 2k compared as q > (2k)^4"))

        # P4
        if n == 1:
            dH, dH_exact = Fraction(1), True
        else:
            dH, dH_exact = parse_rational(_need(est, "dH_prev", n, "P4 l-growth")), False
        l_rhs = 2 * k**10 * q**2 * dH
        _, q_next, _ = next_alpha(st)
        qn_rhs = Fraction(2 * k**12 * q**2)
        l_ok = l >= l_rhs
        q_ok = q_next > qn_rhs
        p4_parts = (
            ConditionEntry("P4.l_growth", l_ok, Fraction(l), l_rhs, dH_exact,
                           "l >= 2 k^10 q^2 ||dH_prev||"),
            ConditionEntry("P4.q_growth", q_ok, Fraction(q_next), qn_rhs, True,
                           "q_next > 2 k^12 q^2"),
        )
        entries.append(ConditionEntry("P4", l_ok and q_ok, Fraction(q_next), qn_rhs,
                                      dH_exact, "both growth clauses", p4_parts))

        # closeness of the limit rotation number
        c_hat = _need(est, "C_hat", n, "ALPHA_CLOSENESS")
        h_norm = _need(est, "H_norm", n, "ALPHA_CLOSENESS")
        r = int(est.get("r", n))
        r_next = int(est.get("r_next", r + 1))
        lifted_n = Fraction(st.p, st.q)
        lhs = abs(limit_alpha - lifted_n)
        rhs = 1.0 / (2 ** (n + 1) * r * float(c_hat) * q * float(h_norm) ** r_next)
        entries.append(ConditionEntry(
            "ALPHA_CLOSENESS", float(lhs) < rhs, lhs, rhs, False,
            "limit approximated by the last scheduled rotation number; "
            "C_hat and the conjugation norm are estimates"))
        reports.append(ConditionReport(n, tuple(entries)))
    return reports


@dataclass(frozen=True)
class MixingTime:
    m: int
    frak_a: Fraction

    def to_json(self) -> dict:
        return {"m": self.m, "frak_a": fmt_rational(self.frak_a)}


def _first_in_range(a: int, mod: int, lo: int, hi: int) -> Optional[int]:
    """Least ``x >= 0`` with ``lo <= a*x mod mod <= hi`` (``0 <= lo <= hi < mod``)."""
    a %= mod
    if lo == 0:
        return 0
    if a == 0:
        return None
    x = -(-lo // a)
    if a * x <= hi:
        return x
    # a*x - mod*y must land in [lo, hi]; solve for the least y in the smaller modulus
    y = _first_in_range(-mod % a, a, lo % a, hi % a) if lo % a <= hi % a else None
    if y is None:
        return None
    x = -(-(lo + mod * y) // a)
    return x if a * x - mod * y <= hi else None


def _least_positive_hit(c: int, Q: int, lo: int, hi: int) -> Optional[int]:
    """Least ``m >= 1`` with ``lo <= c*m mod Q <= hi``."""
    # substitute m = x + 1 so the search starts at x = 0
    lo2, hi2 = (lo - c) % Q, (hi - c) % Q
    if lo2 <= hi2:
        x = _first_in_range(c, Q, lo2, hi2)
    else:
        cands = [_first_in_range(c, Q, 0, hi2), _first_in_range(c, Q, lo2, Q - 1)]
        cands = [v for v in cands if v is not None]
        x = min(cands) if cands else None
    return None if x is None else x + 1


def mixing_time(q_n: int, q_next: int, p_next: int) -> MixingTime:
    """Least ``m <= q_next`` whose rotation lands within ``q_n/q_next`` of a half period."""
    if q_n < 1 or q_next < q_n:
        raise AbcError("CONFIG", "need q_next >= q_n >= 1")
    if gcd(p_next, q_next) != 1:
        raise AbcError("NON_COPRIME", f"gcd({p_next}, {q_next}) != 1")
    Q = q_next
    c = (q_n * p_next) % Q
    # |x/Q - 1/2| <= q_n/Q  <=>  |2x - Q| <= 2 q_n,  x = c*m mod Q in [0, Q)
    lo = max(0, -(-(Q - 2 * q_n) // 2))
    hi = min(Q - 1, (Q + 2 * q_n) // 2)
    m = _least_positive_hit(c, Q, lo, hi) if lo <= hi else None
    if m is None or m > q_next:
        raise AbcError("NO_MIXING_TIME", f"no m <= {q_next} for q_n={q_n}, p_next={p_next}")
    return MixingTime(m, frak_a(m, q_n, q_next, p_next))


def frak_a(m: int, q_n: int, q_next: int, p_next: int) -> Fraction:
    """``m p_next/q_next - 1/(2 q_n)`` reduced mod ``1/q_n`` into [-1/(2q_n), 1/(2q_n))."""
    v = m * Fraction(p_next, q_next) - Fraction(1, 2 * q_n)
    w = Fraction(1, q_n)
    shift = (v / w + Fraction(1, 2)).__floor__()
    return v - w * shift


def mixing_time_scan(q_n: int, q_next: int, p_next: int) -> Optional[int]:
    """Brute-force definition of the mixing time (exhaustive over m)."""
    thr = Fraction(q_n, q_next)
    for m in range(1, q_next + 1):
        v = Fraction(m * q_n * p_next, q_next) - Fraction(1, 2)
        dist = abs(v - round(v))
        if dist <= thr:
            return m
    return None


def stages_from_iterable(rows: Iterable[Mapping], strict: bool = False) -> list[StageParams]:
    return [derive_stage(int(r["n"]), int(r["k"]), int(r["l"]), int(r["q"]), int(r["p"]),
                         r["sigma"], strict=strict) for r in rows]

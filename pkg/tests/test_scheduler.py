import math
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from abctorus.errors import AbcError
from abctorus.scheduler import (build_schedule, check_conditions, derive_stage, fmt_rational,
                                floor_scaled_power, frak_a, integer_root, mixing_time,
                                mixing_time_scan, next_alpha, parse_rational)


def test_toy_derived_fields(toy_stage):
    s = toy_stage
    assert (s.shear_a, s.rot_cols, s.rot_cells, s.phiA_lambda, s.phiA_mu) == (32, 8, 8192, 8, 32)
    assert s.shear_eps == Fraction(1, 2 * 2**10)
    assert s.rot_eps == Fraction(1, 2 * 2**11)


def test_shear_b_against_high_precision_oracle():
    mpmath.mp.dps = 60
    for n, q, sigma in [(1, 2, Fraction(3, 8)), (1, 257, Fraction(3, 8)), (3, 999, Fraction(1, 3)),
                        (2, 4096, Fraction(5, 12)), (1, 65536, Fraction(3, 8))]:
        want = int(mpmath.floor(n * mpmath.power(q, mpmath.mpf(sigma.numerator) / sigma.denominator)))
        assert floor_scaled_power(n, q, sigma) == want
    assert derive_stage(1, 2, 4, 2, 1, "3/8").shear_b == 1


def test_floor_at_exact_integer_boundary():
    # 16^(1/4) = 2 exactly and 2^(1/2) * 2 = 2.83
    assert floor_scaled_power(1, 16, Fraction(1, 4)) == 2
    assert floor_scaled_power(2, 81, Fraction(1, 4)) == 6
    # 3 * 1000^(1/3) = 30 exactly; naive floating evaluation lands just below
    assert floor_scaled_power(3, 1000, Fraction(1, 3)) == 30


@given(st.integers(0, 10**40), st.integers(1, 9))
def test_integer_root_is_floor_root(x, t):
    m = integer_root(x, t)
    assert m**t <= x < (m + 1) ** t


def test_errors():
    with pytest.raises(AbcError) as e:
        derive_stage(1, 2, 4, 2, 2, "3/8")
    assert e.value.code == "NON_COPRIME"
    for sigma in ("1/4", "1/2", "0.6", "1/10"):
        with pytest.raises(AbcError) as e:
            derive_stage(1, 2, 4, 2, 1, sigma)
        assert e.value.code == "BAD_SIGMA"


def test_strict_mode_accepts_consistent_stage():
    s = derive_stage(1, 2, 4, 257, 1, "3/8", strict=True)
    s.check_consistent()


def test_inconsistent_params_detected(toy_stage):
    from dataclasses import replace
    bad = replace(toy_stage, rot_cells=4096)
    with pytest.raises(AbcError) as e:
        bad.check_consistent()
    assert e.value.code == "INCONSISTENT_PARAMS"


def test_next_alpha_examples(toy_stage):
    a, q, p = next_alpha(toy_stage)
    assert (a, q, p) == (Fraction(17, 32), 32, 17)
    a, q, p = next_alpha(derive_stage(1, 1, 1, 1, 0, "3/8"))
    assert (a, q) == (Fraction(0), 1)
    a, q, p = next_alpha(derive_stage(1, 3, 9, 3, 1, "3/8"))
    # big-integer oracle: 1/3 + 1/243 = (81 + 1)/243
    num, den = 1 * 243 + 3 * 1, 3 * 243
    g = math.gcd(num, den)
    assert (a.numerator, a.denominator) == (num // g, den // g) == (82, 243)


def test_schedule_denominators_are_multiples():
    stages = build_schedule([2, 3, 4], [4, 5, 6], 2, 1, "3/8")
    for prev, nxt in zip(stages, stages[1:]):
        assert nxt.q % prev.q == 0
        assert Fraction(nxt.p, nxt.q) > Fraction(prev.p, prev.q)


@pytest.mark.parametrize("qn,qnext,p,m,a", [
    (2, 16, 1, 3, Fraction(-1, 16)),
    (1, 4, 1, 1, Fraction(-1, 4)),
    (1, 1, 1, 1, Fraction(-1, 2)),
    (2, 32, 17, 7, Fraction(-1, 32)),
])
def test_mixing_time_examples(qn, qnext, p, m, a):
    mt = mixing_time(qn, qnext, p)
    assert (mt.m, mt.frak_a) == (m, a)
    assert mixing_time_scan(qn, qnext, p) == m


def test_mixing_time_errors():
    with pytest.raises(AbcError) as e:
        mixing_time(2, 16, 2)
    assert e.value.code == "NON_COPRIME"
    with pytest.raises(AbcError) as e:
        mixing_time(4, 2, 1)
    assert e.value.code == "CONFIG"


@st.composite
def mixing_instances(draw):
    qn = draw(st.integers(1, 50))
    qnext = draw(st.integers(qn, 10**4))
    p = draw(st.integers(0, qnext - 1).filter(lambda v: math.gcd(v, qnext) == 1))
    return qn, qnext, p


@settings(max_examples=60, deadline=None)
@given(mixing_instances())
def test_mixing_time_matches_scan(inst):
    qn, qnext, p = inst
    want = mixing_time_scan(qn, qnext, p)
    if want is None:
        with pytest.raises(AbcError) as e:
            mixing_time(qn, qnext, p)
        assert e.value.code == "NO_MIXING_TIME"
        return
    mt = mixing_time(qn, qnext, p)
    assert mt.m == want
    assert abs(mt.frak_a) <= Fraction(1, qnext)
    assert -Fraction(1, 2 * qn) <= mt.frak_a < Fraction(1, 2 * qn)
    # float re-computation of the reduced offset
    v = mt.m * p / qnext - 1 / (2 * qn)
    w = 1 / qn
    fl = v - w * math.floor(v / w + 0.5)
    # compare as classes mod 1/q_n: the two ends of the window are the same class
    gap = (fl - float(mt.frak_a)) / w
    assert abs(gap - round(gap)) * w <= 1e-12


def test_frak_a_representative():
    assert frak_a(1, 2, 4, 1) == Fraction(0)
    assert frak_a(2, 2, 4, 1) == Fraction(-1, 4)


def _estimates(n=1):
    return {n: {"C_hat": Fraction(3, 2), "H_norm": Fraction(10)}}


def test_conditions_toy(toy_stage):
    rep = check_conditions([toy_stage], _estimates())[0]
    assert rep.entry("P3").satisfied is False
    p4 = rep.entry("P4")
    assert p4.satisfied is False
    q_part = [p for p in p4.parts if p.name == "P4.q_growth"][0]
    assert (q_part.lhs, q_part.rhs) == (32, 32768)
    assert rep.entry("ALPHA_CLOSENESS").exact is False


def test_p3_examples():
    big = derive_stage(1, 2, 4, 65537, 1, "3/8")
    assert check_conditions([big], _estimates())[0].entry("P3").satisfied
    at = derive_stage(1, 2, 4, 65536, 1, "3/8")
    # 65536^(1/4) = 16 > 4
    assert check_conditions([at], _estimates())[0].entry("P3").satisfied
    flag = derive_stage(1, 2, 4, 257, 1, "3/8")
    assert check_conditions([flag], _estimates())[0].entry("P3").satisfied
    edge = derive_stage(1, 2, 4, 255, 1, "3/8")
    assert not check_conditions([edge], _estimates())[0].entry("P3").satisfied


def test_missing_estimate():
    s = build_schedule([2, 3], [4, 5], 2, 1, "3/8")
    with pytest.raises(AbcError) as e:
        check_conditions(s, {1: {"C_hat": 1, "H_norm": 1}, 2: {"C_hat": 1, "H_norm": 1}})
    assert e.value.code == "MISSING_ESTIMATE"
    with pytest.raises(AbcError) as e:
        check_conditions(s[:1], {})
    assert e.value.code == "MISSING_ESTIMATE"


def _two_stage_estimates():
    e = {"C_hat": Fraction(3, 2), "H_norm": Fraction(10), "dH_prev": Fraction(2),
         "lip_prev": Fraction(2)}
    return {1: dict(e), 2: dict(e)}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 60), st.integers(1, 300),
       st.integers(0, 3), st.integers(0, 40))
def test_conditions_monotone_in_next_k_and_l(k1, k2, l1, q1, dk, dl):
    est = _two_stage_estimates()
    base = build_schedule([k1, k2], [l1, 3], q1, 1, "3/8")
    big = build_schedule([k1, k2 + dk], [l1 + dl, 3], q1, 1, "3/8")
    a = check_conditions(base, est)[0]
    b = check_conditions(big, est)[0]
    for name in ("P1", "P2", "P3", "P4"):
        if a.entry(name).satisfied:
            assert b.entry(name).satisfied, name


def test_rational_formatting():
    assert fmt_rational(Fraction(-3, 4)) == "-3/4"
    assert parse_rational("17/32") == Fraction(17, 32)
    assert parse_rational(" 5 ") == 5

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abctorus.conjugation import (AlignedRotation, ShearMap, StepProfile, TypeAMap, TypeBMap,
                                  assemble_stage, shear_eval, shift_law_expected,
                                  step_profile_eval, typeA_eval, typeA_index_image, typeB_eval)
from abctorus.diagnostics import shift_law_check
from abctorus.errors import AbcError
from abctorus.maps import (Compose, Rotation, Tag, TorusPoint, circle_dist, det2, eval_jet,
                           jacobian_fd_check)
from abctorus.partitions import CellIndex, Level, cell_box, locate, sample_zeta_points
from abctorus.scheduler import mixing_time

SP = StepProfile(4, 3, Fraction(1, 16))
unit = st.floats(0, 1, exclude_max=True, allow_nan=False)


def test_step_profile_values():
    assert step_profile_eval(SP, 0.1) == 0.0
    assert step_profile_eval(SP, 0.3) == 0.75
    assert step_profile_eval(SP, 0.25) == pytest.approx(0.375, abs=1e-15)


def test_step_profile_rejects_bad_eps():
    for eps in (Fraction(1, 4), Fraction(2, 7), Fraction(0)):
        with pytest.raises(AbcError):
            StepProfile(4, 3, eps)


def test_shear_examples():
    g = ShearMap(SP, 1)
    res = shear_eval(g, TorusPoint(0.1, 0.3))
    assert res.tag == Tag.GOOD
    assert (res.jet.point.theta, res.jet.point.r) == pytest.approx((0.85, 0.3))
    assert np.array_equal(res.jet.deriv, np.eye(2))
    res = shear_eval(g, TorusPoint(0.4, 0.0))
    assert res.jet.point == TorusPoint(0.4, 0.0) and res.tag == Tag.GOOD


def test_shear_slope_at_cell_boundary():
    g = ShearMap(SP, 1)
    res = shear_eval(g, TorusPoint(0.0, 0.25))
    # (b/a) * (a/(2 eps)) * rho'(0) = 3 * 8 * 1
    assert res.jet.deriv[0, 1] == pytest.approx(24.0, rel=1e-12)
    assert res.tag == Tag.TRANSITION
    h = 1e-7
    fd = (step_profile_eval(SP, 0.25 + h) - step_profile_eval(SP, 0.25 - h)) / (2 * h)
    assert fd == pytest.approx(24.0, rel=1e-6)


def test_shear_inverse_is_exact():
    g = ShearMap(SP, 1)
    th, r = np.linspace(0, 1, 101)[:-1], np.linspace(0, 1, 101)[:-1] ** 2
    back = g.inverse().eval_batch(g.eval_batch(th, r).theta, r)
    assert np.max(circle_dist(back.theta, th)) <= 1e-14


# ---------------------------------------------------------------- type A

def test_type_a_example(k2q1_stage):
    m = TypeAMap(k2q1_stage)
    assert m.translation(5, 3) == pytest.approx((23 / 128, 1 / 16))
    src = CellIndex(Level.ZETA, 0, 0, 5, 1, 2, 3, 2, 7)
    c = cell_box(k2q1_stage, src).center()
    res = typeA_eval(m, k2q1_stage, c)
    assert res.tag == Tag.GOOD
    assert res.jet.point.theta - c.theta == Fraction(23, 128)
    assert res.jet.point.r - c.r == Fraction(1, 16)
    assert locate(k2q1_stage, Level.ZETA, res.jet.point) == \
        CellIndex(Level.ZETA, 0, 0, 28, 1, 2, 5, 2, 7)


def test_type_a_index_permutation_table():
    K5 = 32
    pairs = [(u2, v0) for u2 in range(1, K5 - 1) for v0 in range(1, K5 - 1)]
    once = {p: typeA_index_image(K5, *p) for p in pairs}
    assert sorted(once.values()) == sorted(pairs)
    for u2, v0 in pairs:
        twice = typeA_index_image(K5, *once[(u2, v0)])
        assert twice == (K5 - u2 - 1, K5 - v0 - 1)
        four = twice
        for _ in range(2):
            four = typeA_index_image(K5, *four)
        assert four == (u2, v0)


def test_type_a_double_application_on_cells(k2q1_stage):
    m = TypeAMap(k2q1_stage)
    K5 = 32
    rng = np.random.default_rng(4)
    d = sample_zeta_points(k2q1_stage, rng, 300)
    for i in range(300):
        src = CellIndex(Level.ZETA, *(int(d[f][i]) for f in ("u0", "u1", "u2", "u3", "u4", "v0", "v1", "v2")))
        c = cell_box(k2q1_stage, src).center()
        (th, r), tag1 = m.eval_exact(c.theta, c.r)
        (th2, r2), tag2 = m.eval_exact(th, r)
        assert tag1 == tag2 == Tag.GOOD
        assert locate(k2q1_stage, Level.ZETA, TorusPoint(th2, r2)) == CellIndex(
            Level.ZETA, src.u0, src.u1, K5 - src.u2 - 1, src.u3, src.u4, K5 - src.v0 - 1,
            src.v1, src.v2)


def test_type_a_eta_action(toy_stage):
    m = TypeAMap(toy_stage)
    d = sample_zeta_points(toy_stage, np.random.default_rng(9), 20000)
    out = m.eval_batch(d["theta"], d["r"])
    assert out.good.all()
    for i in range(0, 20000, 97):
        img = locate(toy_stage, Level.ETA, TorusPoint(out.theta[i], out.r[i]))
        assert img == CellIndex(Level.ETA, int(d["u0"][i]), int(d["u1"][i]),
                                32 - int(d["v0"][i]) - 1, v0=int(d["u2"][i]))


def test_type_a_outside_good_cells_is_identity(k2q1_stage):
    m = TypeAMap(k2q1_stage)
    res = typeA_eval(m, k2q1_stage, TorusPoint(Fraction(0), Fraction(1, 3)))
    assert res.tag == Tag.TRANSITION
    assert res.jet.point == TorusPoint(Fraction(0), Fraction(1, 3))


# ---------------------------------------------------------------- type B

def test_type_b_examples(k2q1_stage):
    m = TypeBMap.from_stage(k2q1_stage)
    A = m.rot_cells
    ci = math.floor(0.3 * A)
    assert math.floor(0.3 * k2q1_stage.rot_cols) == 1
    center = TorusPoint((ci + 0.5) / A, (7 + 0.5) / A)
    res = typeB_eval(m, k2q1_stage, center)
    assert res.tag == Tag.GOOD
    assert circle_dist(res.jet.point.theta, center.theta) <= 1e-15
    assert np.allclose(res.jet.deriv, [[0, -1], [1, 0]], atol=1e-15)
    off = TorusPoint((ci + 0.5 + 0.49) / A, (7 + 0.5) / A)
    res = typeB_eval(m, k2q1_stage, off)
    assert res.tag == Tag.GOOD
    assert np.array_equal(res.jet.deriv, np.eye(2))
    assert res.jet.point.theta == pytest.approx(off.theta, abs=1e-15)


def test_type_b_area_everywhere():
    m = TypeBMap(4, 16, 2)
    rng = np.random.default_rng(0)
    out = m.eval_batch(rng.random(100000), rng.random(100000))
    assert (~out.good).any()
    assert np.max(np.abs(det2(out.deriv) - 1)) <= 1e-9


def test_type_b_transition_derivative():
    m = TypeBMap(4, 16, 2)
    A = m.rot_cells
    p = TorusPoint((4 + 0.5 + 0.45) / A, (3 + 0.5) / A)
    assert eval_jet(m, p).tag == Tag.TRANSITION
    assert jacobian_fd_check(m, p, h=1e-7, require_collar_free=False) <= 1e-5


# ---------------------------------------------------------------- equivariance

@settings(max_examples=100, deadline=None)
@given(unit, unit, st.integers(1, 3))
def test_equivariance_under_one_over_q(toy, th, r, shift):
    q = toy.stage.q
    for mp in (toy.type_a, toy.type_b, toy.g):
        a = mp.eval_batch(th + shift / q, r)
        b = mp.eval_batch(th, r)
        assert a.good[0] == b.good[0]
        assert circle_dist(a.theta, b.theta + shift / q)[0] <= 1e-10
        assert circle_dist(a.r, b.r)[0] <= 1e-10


def test_shear_commutes_exactly(toy):
    R = Rotation(Fraction(1, toy.stage.q))
    rng = np.random.default_rng(1)
    th, r = rng.random(100000), rng.random(100000)
    a = Compose(toy.g, R).eval_batch(th, r)
    b = Compose(R, toy.g).eval_batch(th, r)
    assert np.max(circle_dist(a.theta, b.theta)) <= 1e-12
    assert np.array_equal(a.r, b.r) and np.array_equal(a.deriv, b.deriv)


def test_h_commutes_on_good_domain(toy):
    R = Rotation(Fraction(1, toy.stage.q))
    rng = np.random.default_rng(2)
    th, r = rng.random(50000), rng.random(50000)
    a = Compose(toy.h, R).eval_batch(th, r)
    b = Compose(R, toy.h).eval_batch(th, r)
    ok = a.good & b.good
    assert ok.sum() > 100
    assert np.max(circle_dist(a.theta[ok], b.theta[ok])) <= 1e-10
    assert np.max(circle_dist(a.r[ok], b.r[ok])) <= 1e-10


def test_phi_is_identity_on_odd_half_columns(toy):
    q = toy.stage.q
    rng = np.random.default_rng(3)
    u0 = 2 * rng.integers(0, q, 1000) + 1
    th = (u0 + rng.random(1000)) / (2 * q)
    r = rng.random(1000)
    out = toy.phi.eval_batch(th, r)
    assert out.good.all()
    assert np.array_equal(out.theta, th) and np.array_equal(out.r, r)


def test_h_is_isometric_on_good_points(toy):
    d = sample_zeta_points(toy.stage, np.random.default_rng(6), 50000)
    out = toy.h.eval_batch(d["theta"], d["r"])
    J = out.deriv[out.good]
    assert J.shape[0] > 1000
    JtJ = np.einsum("nji,njk->nik", J, J)
    assert np.max(np.abs(JtJ - np.eye(2))) <= 1e-9


def test_shift_law_phi_exact(toy):
    rep = shift_law_check(toy, "phi", 40000, seed=5)
    assert rep.good > 1000 and rep.exact == rep.good


def test_shift_law_rule():
    assert list(shift_law_expected([0, 0, 1, 1], [0, 1, 0, 1], 2, "phi")) == [0, 1, 0, 0]
    assert list(shift_law_expected([0, 0, 1, 1], [0, 1, 0, 1], 2, "Phi")) == [0, 1, 0, 1]


# ---------------------------------------------------------------- assembly

def test_first_stage_conjugation_is_h(toy):
    assert toy.H is toy.h
    assert toy.alpha_next == Fraction(17, 32)
    assert toy.mixing.m == 7


def test_assemble_rejects_wrong_alpha(toy_stage):
    with pytest.raises(AbcError) as e:
        assemble_stage(toy_stage, Fraction(1, 16), mixing_time(2, 32, 17))
    assert e.value.code == "INCONSISTENT_PARAMS"


def test_f_on_good_chains_preserves_area(toy):
    rng = np.random.default_rng(12)
    out = toy.f.eval_batch(rng.random(100000), rng.random(100000))
    assert out.good.sum() > 100
    assert np.max(np.abs(det2(out.deriv[out.good]) - 1)) <= 1e-9


def test_aligned_rotation_good_domain():
    rot = AlignedRotation(Fraction(23, 32), Fraction(3, 4), 8)
    out = rot.eval_batch(np.array([0.0, 1 / 32, 0.124]), np.zeros(3))
    # columns of width 1/8: 0 -> 23/32 lands 5 columns over, 1/32 -> 3/4 and
    # 0.124 -> 0.843 land the nominal 6 over
    assert [bool(x) for x in out.good] == [False, True, True]
    with pytest.raises(AbcError):
        AlignedRotation(Fraction(1, 3), Fraction(1, 3), 8)

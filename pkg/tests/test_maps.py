import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abctorus.conjugation import ShearMap, StepProfile, TypeAMap, TypeBMap
from abctorus.errors import AbcError
from abctorus.maps import (Compose, Identity, Jet, ProjPoint, Rotation, Tag, TorusPoint,
                           circle_dist, det2, eval_jet, jacobian_fd_check, projectivize,
                           projectivize_batch, rotate, rotation_matrices)
from abctorus.scheduler import derive_stage

SHEAR = ShearMap(StepProfile(4, 3, Fraction(1, 16)), 1)
TWIST = TypeBMap(4, 16, 2)


def test_points_reduce_mod_one():
    p = TorusPoint(1.25, -0.25)
    assert (p.theta, p.r) == (0.25, 0.75)
    assert TorusPoint(Fraction(5, 4), Fraction(-1, 4)).theta == Fraction(1, 4)
    assert ProjPoint(p, 1.5).t == 0.5


def test_rotate_examples():
    assert rotate(0, TorusPoint(0.3, 0.7)) == TorusPoint(0.3, 0.7)
    assert rotate(Fraction(1, 2), TorusPoint(0.75, 0.2)) == TorusPoint(0.25, 0.2)
    p = rotate(Fraction(17, 32), TorusPoint(Fraction(0), Fraction(0)))
    assert p.theta == Fraction(17, 32) and p.r == 0
    res = eval_jet(Rotation(Fraction(17, 32)), TorusPoint(0, 0))
    assert res.jet.point.theta == 17 / 32
    assert np.array_equal(res.jet.deriv, np.eye(2))


def test_composed_rotations():
    res = eval_jet(Compose(Rotation(Fraction(1, 4)), Rotation(Fraction(1, 4))), TorusPoint(0, 0))
    assert res.jet.point == TorusPoint(0.5, 0.0)
    assert np.array_equal(res.jet.deriv, np.eye(2))
    assert res.tag == Tag.GOOD


def test_shear_plateau_is_rigid():
    res = eval_jet(SHEAR, TorusPoint(0.1, 0.3))
    assert res.tag == Tag.GOOD
    assert np.array_equal(res.jet.deriv, np.eye(2))


def test_double_quarter_turn_is_minus_identity():
    # block (1, 0) sits in column 0 of 4 at k=2 -> beta = 0; use column 1 instead
    A = TWIST.rot_cells
    center = ((4 + 0.5) / A, 0.5 / A)
    two = Compose(TWIST, TWIST)
    res = eval_jet(two, TorusPoint(*center))
    assert res.tag == Tag.GOOD
    assert np.allclose(res.jet.deriv, -np.eye(2), atol=1e-15)
    assert math.isclose(projectivize(res.jet, 0.3), 0.3, abs_tol=1e-12)


def test_projectivize_examples():
    J = Jet(TorusPoint(0, 0), np.eye(2))
    assert projectivize(J, 0.37) == pytest.approx(0.37)
    beta = 0.7
    R = Jet(TorusPoint(0, 0), rotation_matrices(beta))
    assert projectivize(R, 0.1) == pytest.approx((0.1 + beta / math.pi) % 1)
    shear = Jet(TorusPoint(0, 0), np.array([[1.0, 1.0], [0.0, 1.0]]))
    want = math.atan2(1.0, 1.0) / math.pi
    assert projectivize(shear, 0.5) == pytest.approx(want) == pytest.approx(0.25)


def test_singular_derivative():
    with pytest.raises(AbcError) as e:
        projectivize(Jet(TorusPoint(0, 0), np.array([[1.0, 0.0], [0.0, 1e-13]])), 0.2)
    assert e.value.code == "SINGULAR_DERIV"


def test_numeric_underflow_guard():
    fine = TypeAMap(derive_stage(1, 4, 4, 1, 0, "3/8"))
    with pytest.raises(AbcError) as e:
        eval_jet(fine, TorusPoint(0.1, 0.1))
    assert e.value.code == "NUMERIC_UNDERFLOW"
    assert e.value.exit_code == 4


def test_fd_check_examples():
    assert jacobian_fd_check(Rotation(0.3), TorusPoint(0.2, 0.9)) <= 1e-10
    assert jacobian_fd_check(SHEAR, TorusPoint(0.5, 0.3)) <= 1e-9
    A = TWIST.rot_cells
    assert jacobian_fd_check(TWIST, TorusPoint(4.5 / A, 0.5 / A), h=1e-5) <= 1e-5
    with pytest.raises(AbcError) as e:
        jacobian_fd_check(SHEAR, TorusPoint(0.5, 0.25))
    assert e.value.code == "IN_TRANSITION"


def test_shear_transition_derivative_matches_fd():
    # off the plateau: closed-form psi' against a fine central difference
    err = jacobian_fd_check(SHEAR, TorusPoint(0.5, 0.25), h=1e-7, require_collar_free=False)
    assert err <= 1e-5


# ---------------------------------------------------------------- properties

def _primitives():
    toy = derive_stage(1, 2, 4, 2, 1, "3/8")
    return [Rotation(0.137), Rotation(Fraction(17, 32)), SHEAR, SHEAR.inverse(), TWIST,
            TWIST.inverse(), ShearMap.from_stage(toy), TypeBMap.from_stage(toy), Identity()]


PRIMS = _primitives()
prim = st.sampled_from(range(len(PRIMS)))
unit = st.floats(0, 1, exclude_max=True, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(prim, prim, prim, unit, unit)
def test_composition_is_associative(a, b, c, th, r):
    A, B, C = PRIMS[a], PRIMS[b], PRIMS[c]
    left = Compose(Compose(A, B), C).eval_batch(th, r)
    right = Compose(A, Compose(B, C)).eval_batch(th, r)
    assert circle_dist(left.theta, right.theta)[0] <= 1e-12
    assert circle_dist(left.r, right.r)[0] <= 1e-12
    assert np.max(np.abs(left.deriv - right.deriv)) <= 1e-12 * max(1.0, np.max(np.abs(left.deriv)))
    assert left.good[0] == right.good[0]


@settings(max_examples=200, deadline=None)
@given(prim, unit, unit)
def test_inverse_round_trip(a, th, r):
    f = PRIMS[a]
    fw = f.eval_batch(th, r)
    back = f.inverse().eval_batch(fw.theta, fw.r)
    if fw.good[0] and back.good[0]:
        assert circle_dist(back.theta, th)[0] <= 1e-10
        assert circle_dist(back.r, r)[0] <= 1e-10


def test_type_a_inverse_round_trip(toy):
    rng = np.random.default_rng(3)
    th, r = rng.random(20000), rng.random(20000)
    fw = toy.type_a.eval_batch(th, r)
    back = toy.type_a.inverse().eval_batch(fw.theta, fw.r)
    ok = fw.good & back.good
    assert ok.sum() > 1000
    assert np.max(circle_dist(back.theta[ok], th[ok])) <= 1e-10
    assert np.max(circle_dist(back.r[ok], r[ok])) <= 1e-10


angle = st.floats(-math.pi, math.pi, allow_nan=False)
scale = st.floats(0.2, 5.0, allow_nan=False)
shear_amt = st.floats(-3, 3, allow_nan=False)


def _matrix(a, s, c):
    return rotation_matrices(a) @ np.diag([s, 1 / s]) @ np.array([[1.0, c], [0.0, 1.0]])


@settings(max_examples=200, deadline=None)
@given(angle, scale, shear_amt, angle, scale, shear_amt, unit)
def test_projectivization_is_group_action(a1, s1, c1, a2, s2, c2, t):
    J1, J2 = _matrix(a1, s1, c1), _matrix(a2, s2, c2)
    lhs = projectivize_batch(J1 @ J2, t)
    rhs = projectivize_batch(J1, projectivize_batch(J2, t))
    assert circle_dist(lhs, rhs) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(prim, prim, unit, unit)
def test_area_preserved_on_good_evaluations(a, b, th, r):
    out = Compose(PRIMS[a], PRIMS[b]).eval_batch(th, r)
    if out.good[0]:
        assert abs(det2(out.deriv)[0] - 1) <= 1e-9


def test_area_preserved_on_assembled_maps(toy):
    rng = np.random.default_rng(11)
    th, r = rng.random(50000), rng.random(50000)
    for mp in (toy.phi, toy.h, toy.f, toy.Phi):
        out = mp.eval_batch(th, r)
        assert out.good.any()
        assert np.max(np.abs(det2(out.deriv[out.good]) - 1)) <= 1e-9

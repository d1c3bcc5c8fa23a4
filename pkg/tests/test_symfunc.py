import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hessbound import symfunc as sf
from hessbound.errors import ConeViolation, DomainError, UnsupportedOperator


def brute_sigma(lam, k):
    return sum(math.prod(c) for c in itertools.combinations(lam, k))


# ------------------------------------------------------------- sigma_k
@pytest.mark.parametrize(
    "lam,k,expected",
    [((1, 1, 1), 2, 3.0), ((1, 2, 3), 3, 6.0), ((3, 1, -1), 2, -1.0), ((1, 2, 3), 0, 1.0)],
)
def test_sigma_examples(lam, k, expected):
    assert sf.sigma(lam, k) == expected


def test_sigma_order_out_of_range():
    with pytest.raises(DomainError):
        sf.sigma((1.0, 2.0, 3.0), 4)
    with pytest.raises(DomainError):
        sf.sigma((1.0, 2.0), -1)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6))
def test_elementary_matches_brute_force(lam):
    e = sf.elementary(lam)
    for k in range(len(lam) + 1):
        assert e[k] == pytest.approx(brute_sigma(lam, k), rel=1e-9, abs=1e-9)


def test_elementary_batched():
    lam = np.random.default_rng(1).normal(size=(4, 3, 5))
    e = sf.elementary(lam, 3)
    assert e.shape == (4, 3, 4)
    assert e[2, 1, 3] == pytest.approx(brute_sigma(lam[2, 1], 3))


# --------------------------------------------------------------- cones
@pytest.mark.parametrize(
    "lam,k,inside",
    [((1, 1, 1), 3, True), ((2, 2, -1), 2, False), ((3, 1, -1), 1, True)],
)
def test_cone_membership_examples(lam, k, inside):
    assert bool(sf.in_cone(lam, sf.ConeSpec.positive(k))) is inside


def test_cone_margin_identity_is_one():
    for n in range(2, 7):
        for k in range(1, n + 1):
            assert sf.cone_margin(np.ones(n), sf.ConeSpec.positive(k)) == pytest.approx(1.0)


def test_cone_spec_validation():
    with pytest.raises(DomainError):
        sf.ConeSpec("negative", 2)
    with pytest.raises(DomainError):
        sf.ConeSpec.lincomb(2, 0.2, 0.2)
    with pytest.raises(DomainError):
        sf.in_cone(np.ones(2), sf.ConeSpec.positive(3))


def test_sampler_is_seeded_and_inside():
    cone = sf.ConeSpec.positive(3)
    a = sf.sample_cone(cone, 5, 200, seed=4)
    b = sf.sample_cone(cone, 5, 200, seed=4)
    assert np.array_equal(a, b)
    assert np.all(sf.in_cone(a, cone))


# ------------------------------------------------------------ operators
def all_operators(n):
    ops = []
    for k in range(1, n + 1):
        ops.append(sf.OperatorSpec.sigma_root(n, k))
        ops.append(sf.OperatorSpec.lincomb(n, k, 1.0, 0.5))
        ops.extend(sf.OperatorSpec.quotient(n, k, l) for l in range(k))
    return ops


@pytest.mark.parametrize("n", range(2, 7))
def test_normalized_at_identity(n):
    for op in all_operators(n):
        assert sf.F_eval(op, np.ones(n)) == pytest.approx(1.0, abs=1e-14)


def test_operator_value_examples():
    assert sf.F_eval(sf.OperatorSpec.quotient(3, 2, 1), (1, 1, 1)) == pytest.approx(1.0)
    assert sf.F_eval(sf.OperatorSpec.sigma_root(3, 2), (1, 2, 3)) == pytest.approx(math.sqrt(11 / 3))
    assert np.allclose(sf.F_grad(sf.OperatorSpec.sigma_root(2, 1), (0.3, 4.0)), [0.5, 0.5])
    lc = sf.OperatorSpec.lincomb(3, 1, 0.0, 1.0)
    assert sf.F_eval(lc, np.ones(3)) == pytest.approx(1.0)


def test_operator_outside_cone_names_order():
    with pytest.raises(ConeViolation) as info:
        sf.F_eval(sf.OperatorSpec.sigma_root(3, 2), [[1.0, 1.0, 1.0], [2.0, 2.0, -1.0]])
    assert info.value.index == (1,)
    assert info.value.order == 2


def test_operator_validation():
    with pytest.raises(DomainError):
        sf.OperatorSpec.quotient(3, 2, 2)
    with pytest.raises(DomainError):
        sf.OperatorSpec.sigma_root(3, 4)
    with pytest.raises(DomainError):
        sf.F_eval(sf.OperatorSpec.sigma_root(3, 2), np.ones(4))


def test_permutation_invariance_is_exact():
    op = sf.OperatorSpec.quotient(5, 3, 1)
    lam = sf.sample_cone(op.cone, 5, 50, seed=2)
    perm = [3, 0, 4, 1, 2]
    assert np.array_equal(sf.F_eval(op, lam), sf.F_eval(op, lam[:, perm]))


@pytest.mark.parametrize("op", all_operators(4), ids=lambda o: o.label())
def test_gradient_and_hessian_match_finite_differences(op):
    lam = sf.sample_cone(op.cone, 4, 5, seed=11)
    h = 1e-6
    for x in lam:
        g = sf.F_grad(op, x)
        H = sf.F_hess(op, x)
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            fd = (sf.F_eval(op, x + e) - sf.F_eval(op, x - e)) / (2 * h)
            assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-8)
            gd = (sf.F_grad(op, x + e) - sf.F_grad(op, x - e)) / (2 * h)
            assert np.allclose(gd, H[i], rtol=1e-5, atol=1e-6)


# --------------------------------------------------------- matrix forms
def test_matrix_derivative_examples():
    for k in (1, 2, 3):
        value, Fij = sf.F_matrix(sf.OperatorSpec.sigma_root(3, k), np.eye(3))
        assert value == pytest.approx(1.0)
        assert np.allclose(Fij, np.eye(3) / 3)
    _, Fij = sf.F_matrix(sf.OperatorSpec.sigma_root(3, 1), np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(Fij, np.eye(3) / 3)


def test_second_derivative_matches_finite_differences():
    op = sf.OperatorSpec.quotient(4, 3, 1)
    rng = np.random.default_rng(3)
    Q = np.linalg.qr(rng.normal(size=(4, 4)))[0]
    for lam in ([3.0, 2.0, 1.5, 1.0], [2.0, 2.0, 1.0, 1.0]):
        W = Q @ np.diag(lam) @ Q.T
        H = rng.normal(size=(4, 4))
        H = H + H.T
        t = 1e-4
        f = lambda s: sf.F_matrix(op, W + s * H)[0]  # noqa: E731
        fd = (f(t) - 2 * f(0.0) + f(-t)) / t**2
        assert sf.F_matrix_second(op, W, H) == pytest.approx(fd, rel=1e-5)


# ------------------------------------------------------ structure checks
@pytest.mark.parametrize("n", [3, 5])
def test_structure_conditions_pass(n):
    for op in all_operators(n):
        rep = sf.check_structure(op, sf.sample_cone(op.cone, n, 200, seed=5), max_pairs=5000)
        assert rep.passed, rep.table()


def test_linear_operator_midpoint_equality():
    op = sf.OperatorSpec.sigma_root(4, 1)
    rep = sf.check_structure(op, sf.sample_cone(op.cone, 4, 50, seed=0))
    assert abs(rep["S1 concave (midpoint)"].worst) < 1e-14


def test_structure_rejects_empty_samples():
    with pytest.raises(DomainError):
        sf.check_structure(sf.OperatorSpec.sigma_root(3, 2), np.zeros((0, 3)))


def test_condition_A_examples():
    op = sf.OperatorSpec.sigma_root(3, 2)
    lhs, rhs = sf.condition_A_sides(op, np.ones(3))
    assert lhs == pytest.approx(1.0)
    assert rhs == pytest.approx(1.0)
    lam = sf.sample_cone(op.cone, 3, 20, seed=1)
    a = sf.condition_A_sides(op, lam)
    b = sf.condition_A_sides(op, 7.5 * lam)
    assert np.allclose(a, b)
    with pytest.raises(UnsupportedOperator):
        sf.condition_A_sides(sf.OperatorSpec.quotient(3, 2, 1), np.ones(3))


def test_newton_maclaurin_examples():
    assert sf.newton_maclaurin_sides((1, 1, 1), 2, 1) == (18.0, 18.0)
    assert sf.newton_maclaurin_sides((1, 2, 3), 2, 1) == (66.0, 72.0)
    # frozen from direct polynomial evaluation: 3*2*sigma_1*sigma_3 vs 2*1*sigma_2^2
    assert sf.newton_maclaurin_sides((1, 2, 3), 3, 2) == (216.0, 242.0)
    with pytest.raises(DomainError):
        sf.newton_maclaurin_sides((1, 2, 3), 2, 2)


def test_gamma2_bound_identity_and_cone():
    assert sf.gamma2_eigen_bound(np.ones(4))
    with pytest.raises(ConeViolation):
        sf.gamma2_eigen_bound((2.0, 2.0, -1.0))

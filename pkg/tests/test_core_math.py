from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abeluniv.constructions import compute_H, h_tail
from abeluniv.poly import (Poly, cesaro_sum_at, derivative, dilate, dyadic_ints, eval_arc, eval_circle,
                           exact_partial_sums, partial_sum_at, weighted_abs_sum)

cplx = st.complex_numbers(max_magnitude=4, allow_nan=False, allow_infinity=False)
coeff_lists = st.lists(cplx, min_size=0, max_size=12)


def naive(c, z):
    return sum(a * z ** k for k, a in enumerate(c))


def test_eval_examples():
    assert Poly([0, 0, 1])(0.5j) == pytest.approx(-0.25)
    assert Poly([1, 1])(1) == 2


def test_eval_random_degree_30_matches_term_sum():
    rng = np.random.default_rng(0)
    c = rng.normal(size=31) + 1j * rng.normal(size=31)
    z = 0.9 * np.exp(1j * rng.uniform(0, 2 * np.pi, 50))
    got = Poly(c)(z)
    want = np.array([naive(c, w) for w in z])
    assert np.max(np.abs(got - want)) < 1e-12


def test_eval_arc_and_circle_match_horner():
    rng = np.random.default_rng(1)
    p = Poly(rng.normal(size=40) + 1j * rng.normal(size=40))
    z = 0.8 * np.exp(1j * (0.3 + 0.01 * np.arange(100)))
    assert np.allclose(eval_arc(p, 0.8, 0.3, 0.01, 100), p(z), atol=1e-11)
    zc = 0.7 * np.exp(2j * np.pi * np.arange(64) / 64)
    assert np.allclose(eval_circle(p, 0.7, 64), p(zc), atol=1e-11)


def test_partial_sums_examples():
    ones = Poly(np.ones(50))
    for n in (0, 3, 17):
        assert partial_sum_at(ones, n, 1) == pytest.approx(n + 1)
    assert partial_sum_at(ones, 2, -1) == pytest.approx(1)
    f = Poly([2.5, 1, 3])
    assert partial_sum_at(f, 0, 0.3 + 1j) == pytest.approx(2.5)


def test_cesaro_examples():
    ones = Poly(np.ones(50))
    for lam in (0, 1, 5, 20):
        assert cesaro_sum_at(ones, lam, 1) == pytest.approx((lam + 2) / 2)
    f = Poly([1.5, -2, 4])
    assert cesaro_sum_at(f, 0, 0.2j) == pytest.approx(1.5)


def test_cesaro_matches_double_loop():
    rng = np.random.default_rng(2)
    c = rng.normal(size=12) + 1j * rng.normal(size=12)
    lam, z = 7, 1j
    want = sum(sum(c[k] * z ** k for k in range(j + 1)) for j in range(lam + 1)) / (lam + 1)
    assert cesaro_sum_at(Poly(c), lam, z) == pytest.approx(want, abs=1e-12)


def test_derivative_examples():
    assert derivative(Poly([0, 0, 0, 1]), 1) == Poly([0, 0, 3])
    assert derivative(Poly([0, 0, 0, 1]), 4).is_zero()


def test_derivative_matches_finite_difference():
    rng = np.random.default_rng(3)
    p = Poly(rng.normal(size=9) + 1j * rng.normal(size=9))
    z, h = 0.3 + 0.2j, 1e-5
    fd = (p(z + h) - p(z - h)) / (2 * h)
    assert abs(derivative(p, 1)(z) - fd) < 1e-6


def test_dilate_examples():
    p = Poly([0, 0, 0, 2])
    assert np.allclose(dilate(p, 0.5).coeffs, [0, 0, 0, 0.25])
    q = Poly([1.5, 2, -1])
    assert dilate(q, 0.0) == Poly([1.5])
    assert dilate(q, 1.0) == q


@given(coeff_lists, coeff_lists, cplx)
def test_ring_operations_commute_with_evaluation(a, b, z):
    z = z / (1 + abs(z))
    P, Q = Poly(a), Poly(b)
    assert (P + Q)(z) == pytest.approx(P(z) + Q(z), abs=1e-9)
    assert (P * Q)(z) == pytest.approx(P(z) * Q(z), abs=1e-8)


@given(coeff_lists, st.floats(0, 1), cplx)
def test_dilate_is_composition(a, r, z):
    z = z / (1 + abs(z))
    P = Poly(a)
    assert dilate(P, r)(z) == pytest.approx(P(r * z), abs=1e-9)


@given(coeff_lists, st.integers(0, 4))
def test_derivative_lowers_degree(a, l):
    P = Poly(a)
    d = derivative(P, l)
    if P.degree is None or P.degree < l:
        assert d.is_zero() or np.all(d.coeffs == 0)
    else:
        assert d.degree is None or d.degree <= P.degree - l


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=10))
def test_dyadic_ints_exact(vals):
    ints, e = dyadic_ints(vals)
    for x, n in zip(vals, ints):
        assert Fraction(n) * Fraction(2) ** e == Fraction(x)


def test_exact_partial_sums_are_fractions():
    p = Poly([0.5, 0.25 + 0.5j, -0.125])
    out = exact_partial_sums(p, 3)
    assert out == [(Fraction(1, 2), 0), (Fraction(3, 4), Fraction(1, 2)), (Fraction(5, 8), Fraction(1, 2)),
                   (Fraction(5, 8), Fraction(1, 2))]
    at_R = exact_partial_sums(Poly([1, 1]), 1, Fraction(3, 2))
    assert at_R[-1] == (Fraction(5, 2), 0)


def test_weighted_abs_sum_bounds_sup():
    rng = np.random.default_rng(4)
    p = Poly(rng.normal(size=20) + 1j * rng.normal(size=20))
    z = 0.8 * np.exp(1j * np.linspace(0, 2 * np.pi, 400))
    assert np.max(np.abs(p(z))) <= weighted_abs_sum(p, 0.8) + 1e-12


# -- tail bounds ------------------------------------------------------------------------------------

def test_h_tail_example():
    assert h_tail(0, 0.5) == pytest.approx(4.0)


def test_H_zero_half():
    # sum_j h_j(1/2) = sum_j 2 (j+1) ... closed form 2r^k(k + r(2-k))/(1-r)^3 at k=0
    assert compute_H(0, 0.5) == pytest.approx(16.0)


def test_H_vanishes():
    assert compute_H(200, 0.5) < 1e-50


@pytest.mark.parametrize("k", [0, 5, 20])
@pytest.mark.parametrize("r", [0.3, 0.7, 0.9])
def test_H_closed_form_matches_sum(k, r):
    direct = sum(h_tail(j, r) for j in range(k, k + 10 ** 4))
    assert compute_H(k, r) == pytest.approx(direct, abs=1e-10)


@pytest.mark.parametrize("k", [0, 3, 11])
def test_h_tail_matches_definition(k):
    # h_j(r) = sum_{i>=j} 2 i r^i
    r = 0.6
    direct = sum(2 * i * r ** i for i in range(k, k + 4000))
    assert h_tail(k, r) == pytest.approx(direct, rel=1e-12)


def test_H_domain_errors():
    with pytest.raises(ValueError):
        compute_H(1, 1.0)
    with pytest.raises(ValueError):
        compute_H(-1, 0.5)

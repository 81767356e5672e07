import math

import numpy as np
import pytest
import sympy
from common import ContractViolationError, DomainError
from jets.jets import (
    Jet2,
    JetPair,
    jet_add,
    jet_compose,
    jet_eval,
    jet_mul,
    jet_partial,
    monomial_count,
)

Y1, Y2 = sympy.symbols("Y1 Y2")


def random_jet(rng, degree_cap, degree=None, integer=False):
    degree = degree_cap if degree is None else degree
    terms = {}
    for j in range(degree + 1):
        for i in range(j + 1):
            value = rng.integers(-5, 6) if integer else rng.normal()
            terms[(j - i, i)] = float(value)
    return Jet2.from_terms(degree_cap, terms)


def as_sympy(jet):
    return sympy.Integer(0) + sum(c * Y1**p1 * Y2**p2 for p1, p2, c in jet.terms())


def truncated(expression, degree_cap):
    poly = sympy.Poly(sympy.expand(expression), Y1, Y2)
    return {
        (int(p1), int(p2)): float(c)
        for (p1, p2), c in poly.terms()
        if p1 + p2 <= degree_cap
    }


def assert_matches(jet, expected_terms, rel=1e-12):
    expected = Jet2.from_terms(jet.degree_cap, expected_terms)
    scale = max(1.0, expected.max_abs())
    np.testing.assert_allclose(jet.coeffs, expected.coeffs, rtol=0, atol=rel * scale)


SWEEP_CAP = 10
_I, _J = np.indices((SWEEP_CAP + 1, SWEEP_CAP + 1))
_WIDE = 2 * SWEEP_CAP + 1
_SUM_INDEX = (
    (_I[:, :, None, None] + _I[None, None]) * _WIDE
    + (_J[:, :, None, None] + _J[None, None])
).ravel()


def expand_product(left, right):
    """Full product of two coefficient grids, cut back to total degree SWEEP_CAP."""
    outer = (left[:, :, None, None] * right[None, None]).ravel()
    full = np.bincount(_SUM_INDEX, weights=outer, minlength=_WIDE * _WIDE)
    full = full.reshape(_WIDE, _WIDE)[: SWEEP_CAP + 1, : SWEEP_CAP + 1]
    return np.where(_I + _J <= SWEEP_CAP, full, 0.0)


def expand_composition(outer, inner):
    one = np.zeros((SWEEP_CAP + 1, SWEEP_CAP + 1))
    one[0, 0] = 1.0
    powers1, powers2 = [one], [one]
    top = max((p1 + p2 for p1, p2, _ in outer.terms()), default=0)
    for _ in range(top):
        powers1.append(expand_product(powers1[-1], inner.y1.grid()))
        powers2.append(expand_product(powers2[-1], inner.y2.grid()))
    total = np.zeros_like(one)
    for p1, p2, value in outer.terms():
        total += value * expand_product(powers1[p1], powers2[p2])
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def test_should_keep_exactly_the_triangular_monomials():
    jet = Jet2.zero(4)

    assert jet.coeffs.shape == (monomial_count(4),) == (15,)


def test_should_reject_non_finite_coefficients():
    with pytest.raises(ContractViolationError):
        Jet2(1, [0.0, float("nan"), 1.0])


def test_should_add_simple_jets():
    a = Jet2.from_terms(2, {(0, 0): 1, (1, 0): 1})
    b = Jet2.from_terms(2, {(0, 0): 1, (0, 1): 1})

    result = jet_add(a, b)

    assert_matches(result, {(0, 0): 2, (1, 0): 1, (0, 1): 1})


def test_should_treat_zero_as_additive_identity(rng):
    a = random_jet(rng, 4)

    assert np.array_equal(jet_add(a, Jet2.zero(4)).coeffs, a.coeffs)


def test_should_add_like_polynomials(rng):
    a, b = random_jet(rng, 4), random_jet(rng, 4)

    result = jet_add(a, b)

    assert_matches(result, truncated(as_sympy(a) + as_sympy(b), 4))


def test_should_refuse_mixed_caps():
    with pytest.raises(ContractViolationError):
        jet_add(Jet2.zero(2), Jet2.zero(3))
    with pytest.raises(ContractViolationError):
        jet_mul(Jet2.zero(2), Jet2.zero(3))


def test_should_square_a_binomial():
    s = Jet2.from_terms(2, {(1, 0): 1, (0, 1): 1})

    result = jet_mul(s, s)

    assert_matches(result, {(2, 0): 1, (1, 1): 2, (0, 2): 1})


def test_should_treat_one_as_multiplicative_identity(rng):
    a = random_jet(rng, 5)

    assert np.array_equal(jet_mul(a, Jet2.constant(5, 1.0)).coeffs, a.coeffs)


def test_should_truncate_products_like_polynomials(rng):
    for _ in range(20):
        a, b = random_jet(rng, 5, degree=3), random_jet(rng, 5, degree=3)

        result = jet_mul(a, b)

        assert_matches(result, truncated(as_sympy(a) * as_sympy(b), 5))


def test_should_multiply_integer_jets_associatively_and_commutatively(rng):
    a, b, c = (random_jet(rng, 6, integer=True) for _ in range(3))

    assert np.array_equal(jet_mul(a, b).coeffs, jet_mul(b, a).coeffs)
    assert np.array_equal(
        jet_mul(jet_mul(a, b), c).coeffs, jet_mul(a, jet_mul(b, c)).coeffs
    )


def test_should_compose_product_with_sum_and_difference():
    outer = Jet2.from_terms(2, {(1, 1): 1})
    inner = JetPair(
        Jet2.from_terms(2, {(1, 0): 1, (0, 1): 1}),
        Jet2.from_terms(2, {(1, 0): 1, (0, 1): -1}),
    )

    result = jet_compose(outer, inner)

    assert_matches(result, {(2, 0): 1, (0, 2): -1})


def test_should_compose_with_identity_pair(rng):
    outer = random_jet(rng, 5)

    result = jet_compose(outer, JetPair.identity(5))

    np.testing.assert_allclose(result.coeffs, outer.coeffs, rtol=0, atol=1e-14)


def test_should_compose_like_brute_force_expansion(rng):
    for _ in range(10):
        outer = random_jet(rng, 6, degree=3)
        inner = JetPair(random_jet(rng, 6, degree=2), random_jet(rng, 6, degree=2))
        inner = JetPair(
            inner.y1 - inner.y1.constant_term, inner.y2 - inner.y2.constant_term
        )

        result = jet_compose(outer, inner)

        expected = as_sympy(outer).subs(
            {Y1: as_sympy(inner.y1), Y2: as_sympy(inner.y2)}, simultaneous=True
        )
        assert_matches(result, truncated(expected, 6), rel=1e-11)


def test_should_match_expansion_over_many_random_products_and_compositions(rng):
    for sample in range(1000):
        left = random_jet(rng, SWEEP_CAP, degree=int(rng.integers(0, 6)))
        right = random_jet(rng, SWEEP_CAP, degree=int(rng.integers(1, 6)))

        if sample % 2 == 0:
            result = jet_mul(left, right)
            expected = expand_product(left.grid(), right.grid())
        else:
            other = random_jet(rng, SWEEP_CAP, degree=int(rng.integers(1, 6)))
            inner = JetPair(
                right - right.constant_term, other - other.constant_term
            )
            result = jet_compose(left, inner)
            expected = expand_composition(left, inner)

        scale = max(1.0, float(np.max(np.abs(expected))))
        np.testing.assert_allclose(
            result.grid(), expected, rtol=0, atol=1e-12 * scale
        )


def test_should_distribute_composition_over_addition(rng):
    f, g = random_jet(rng, 5, integer=True), random_jet(rng, 5, integer=True)
    inner = JetPair(
        Jet2.from_terms(5, {(1, 0): 2, (0, 2): -1}),
        Jet2.from_terms(5, {(0, 1): 1, (1, 1): 3}),
    )

    left = jet_compose(jet_add(f, g), inner)
    right = jet_add(jet_compose(f, inner), jet_compose(g, inner))

    assert np.array_equal(left.coeffs, right.coeffs)


def test_should_refuse_inner_constant_without_opt_in():
    inner = JetPair(Jet2.constant(2, 1.0), Jet2.variable(2, 2))

    with pytest.raises(DomainError):
        jet_compose(Jet2.variable(2, 1), inner)


def test_should_substitute_inner_constant_when_asked():
    outer = Jet2.from_terms(2, {(2, 0): 1})
    inner = JetPair(Jet2.from_terms(2, {(0, 0): 1, (1, 0): 1}), Jet2.variable(2, 2))

    result = jet_compose(outer, inner, shift_ok=True)

    assert_matches(result, {(0, 0): 1, (1, 0): 2, (2, 0): 1})


def test_should_evaluate_composition_pointwise(rng):
    f = random_jet(rng, 6, degree=3)
    g = JetPair(random_jet(rng, 6, degree=2), random_jet(rng, 6, degree=2))
    g = JetPair(g.y1 - g.y1.constant_term, g.y2 - g.y2.constant_term)
    point = (0.3, -0.7)

    composed = jet_eval(jet_compose(f, g), *point)

    inner_value = g.evaluate(*point)
    assert composed == pytest.approx(jet_eval(f, *inner_value), rel=1e-10)


def test_should_extract_mixed_partial():
    a = Jet2.from_terms(3, {(2, 1): 1})

    assert jet_partial(a, 2, 1) == 2.0


def test_should_return_constant_as_zeroth_partial(rng):
    a = random_jet(rng, 4)

    assert jet_partial(a, 0, 0) == a.constant_term


def test_should_reproduce_coefficients_from_partials(rng):
    a = random_jet(rng, 5)

    for p1, p2, value in a.terms():
        assert jet_partial(a, p1, p2) == math.factorial(p1) * math.factorial(p2) * value


def test_should_match_finite_differences_for_partials(rng):
    a = random_jet(rng, 4)
    h = 1e-4

    estimate = (
        jet_eval(a, h, h) - jet_eval(a, h, -h) - jet_eval(a, -h, h) + jet_eval(a, -h, -h)
    ) / (4 * h * h)

    assert estimate == pytest.approx(jet_partial(a, 1, 1), rel=1e-6, abs=1e-6)


def test_should_refuse_partials_beyond_cap():
    with pytest.raises(DomainError):
        jet_partial(Jet2.zero(2), 2, 1)


def test_should_evaluate_simple_sum():
    a = Jet2.from_terms(1, {(1, 0): 1, (0, 1): 1})

    assert jet_eval(a, 1.0, 2.0) == 3.0


def test_should_evaluate_to_constant_at_origin(rng):
    a = random_jet(rng, 5)

    assert jet_eval(a, 0.0, 0.0) == a.constant_term


def test_should_match_naive_monomial_sum(rng):
    a = random_jet(rng, 7)
    y1, y2 = rng.normal(size=2)

    monomials = [c * y1**p1 * y2**p2 for p1, p2, c in a.terms()]
    naive = sum(monomials)

    magnitude = sum(abs(m) for m in monomials)
    assert jet_eval(a, y1, y2) == pytest.approx(naive, rel=1e-12, abs=1e-13 * magnitude)


def test_should_rotate_pair_components():
    pair = JetPair(Jet2.variable(1, 1), Jet2.zero(1))

    rotated = pair.rotate(math.pi / 2)

    np.testing.assert_allclose(rotated.y1.coeffs, [0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(rotated.y2.coeffs, [0, 1, 0], atol=1e-15)

import math

import numpy as np
import pytest
from common import ContractViolationError, DomainError, NotATangencyError
from jets.jets import Jet2, JetPair
from model.model import global_tangent_jet, random_model
from tangency.tangency import (
    TangencyIndex,
    apply_split,
    apply_subsplit,
    split_rank,
    split_rank_check,
    splitting_chart,
    splitting_count,
    tangency_index,
)


def pair(cap, first, second):
    return JetPair(Jet2.from_terms(cap, first), Jet2.from_terms(cap, second))


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_should_detect_index_one_zero():
    jp = pair(3, {(2, 0): 1}, {(1, 1): 1})

    assert tangency_index(jp) == TangencyIndex.index(1, 0)


def test_should_detect_index_one_one():
    jp = pair(3, {(1, 1): 1, (0, 2): 1}, {(1, 1): 2})

    assert tangency_index(jp) == TangencyIndex.index(1, 1)


def test_should_report_flat_for_zero_pair():
    assert tangency_index(JetPair.zero(4)).is_flat


def test_should_refuse_constant_term():
    jp = pair(3, {(0, 0): 1e-3, (2, 0): 1}, {})

    with pytest.raises(NotATangencyError):
        tangency_index(jp)


def test_should_refuse_linear_term():
    jp = pair(3, {(2, 0): 1}, {(0, 1): 0.5})

    with pytest.raises(NotATangencyError):
        tangency_index(jp)


def test_should_ignore_coefficients_below_relative_tolerance():
    jp = pair(4, {(1, 0): 1e-12, (3, 0): 1.0}, {(1, 2): 2.0})

    assert tangency_index(jp) == TangencyIndex.index(2, 0)


def test_should_use_external_scale_when_larger():
    jp = pair(3, {(2, 0): 1e-8}, {})

    assert tangency_index(jp, scale=1e3).is_flat


def test_should_be_invariant_under_common_scaling(rng):
    jp = pair(4, {(3, 1): rng.normal(), (4, 0): 1.0}, {(2, 1): rng.normal()})

    scaled = JetPair(jp.y1 * -250.0, jp.y2 * -250.0)

    assert tangency_index(scaled) == tangency_index(jp) == TangencyIndex.index(2, 1)


def test_should_strictly_increase_when_leading_suborder_is_zeroed(rng):
    first = {(3 - i, i): rng.normal() for i in range(4)}
    second = {(3 - i, i): rng.normal() for i in range(4)}
    before = tangency_index(pair(4, first, second))

    first[(3, 0)] = second[(3, 0)] = 0.0
    after = tangency_index(pair(4, first, second))

    assert before == TangencyIndex.index(2, 0)
    assert after > before


def test_should_keep_order_under_rotation(rng):
    jp = pair(4, {(2, 1): 1.0, (1, 2): rng.normal()}, {(0, 3): rng.normal()})

    rotated = tangency_index(jp.rotate(0.4))

    assert rotated.n == tangency_index(jp).n


def test_should_order_indices_lexicographically():
    assert TangencyIndex.index(1, 2) < TangencyIndex.index(2, 0)
    assert TangencyIndex.index(2, 0) < TangencyIndex.index(2, 1)
    assert TangencyIndex.index(5, 6) < TangencyIndex.flat()
    assert max([TangencyIndex.index(3, 0), TangencyIndex.index(1, 1)]) == TangencyIndex.index(3, 0)


def test_should_refuse_out_of_range_suborder():
    with pytest.raises(DomainError):
        TangencyIndex.index(1, 3)


@pytest.mark.parametrize("n, count", [(1, 6), (2, 12), (5, 42)])
def test_should_count_splitting_functionals(n, count):
    assert splitting_count(n) == count


@pytest.mark.parametrize("n", [1, 2, 3, 7])
def test_should_count_twice_the_monomials(n):
    monomials = sum(1 for j in range(n + 1) for i in range(j + 1))

    assert splitting_chart(n).count == 2 * monomials


def test_should_refuse_order_zero_count():
    with pytest.raises(DomainError):
        splitting_count(0)


def test_should_leave_model_unchanged_with_zero_deltas(rng):
    gm = random_model(rng, 2)

    split = apply_split(gm, np.zeros(6), np.zeros(6))

    assert np.array_equal(split.mu, gm.mu)
    assert np.array_equal(split.nu, gm.nu)
    assert np.array_equal(split.a, gm.a)


def test_should_destroy_tangency_with_constant_split(rng):
    gm = random_model(rng, 1)
    dmu = np.zeros(3)
    dmu[0] = 1e-3

    split = apply_split(gm, dmu, np.zeros(3))

    with pytest.raises(NotATangencyError):
        tangency_index(global_tangent_jet(split))


def test_should_read_index_from_lead_arrays_after_cancelling_splits(rng):
    gm = random_model(rng, 2)
    gm = apply_split(gm, rng.normal(size=6), rng.normal(size=6))
    lead_a, lead_b = np.array(gm.lead_a), np.array(gm.lead_b)
    lead_a[:2] = lead_b[:2] = 0.0
    gm = apply_subsplit(gm, lead_a - gm.lead_a, lead_b - gm.lead_b)

    split = apply_split(gm, -gm.mu, -gm.nu)

    first = next(i for i in range(4) if lead_a[i] != 0.0 or lead_b[i] != 0.0)
    assert tangency_index(global_tangent_jet(split)) == TangencyIndex.index(2, first)


def test_should_refuse_misshaped_deltas(rng):
    gm = random_model(rng, 1)

    with pytest.raises(ContractViolationError):
        apply_split(gm, np.zeros(6), np.zeros(3))
    with pytest.raises(ContractViolationError):
        apply_subsplit(gm, np.zeros(2), np.zeros(3))


def test_should_shift_only_lead_arrays_on_subsplit(rng):
    gm = random_model(rng, 1)

    split = apply_subsplit(gm, [0.5, 0.0, 0.0], [0.0, 0.0, -0.25])

    assert split.lead_a[0] == gm.lead_a[0] + 0.5
    assert split.lead_b[2] == gm.lead_b[2] - 0.25
    assert np.array_equal(split.mu, gm.mu)


@pytest.mark.parametrize("n, rank", [(1, 6), (2, 12)])
def test_should_split_generically(n, rank):
    assert split_rank(n) == rank
    assert split_rank_check(n)


def test_should_detect_degenerate_family():
    def same_for_both(eps):
        half = len(eps) // 2
        return eps[:half], eps[:half]

    assert split_rank(1, same_for_both) == 3
    assert not split_rank_check(1, same_for_both)


def test_should_detect_rotated_lead_term():
    jp = pair(3, {(2, 0): math.cos(1.0)}, {(2, 0): math.sin(1.0)})

    assert tangency_index(jp) == TangencyIndex.index(1, 0)

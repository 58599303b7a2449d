import itertools

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from apf.errors import (
    AlphaOutOfRange,
    DegenerateRanking,
    IdMismatch,
    LengthMismatch,
    NoConstraints,
    NoObjectives,
)
from apf.formulation import TestInstance, parse_formulation
from apf.ranking import Ranking, induced_ranking
from apf.scoring import (
    QualityScore,
    alignment_con,
    alignment_obj,
    alignment_report,
    alignment_total,
    quality_score,
    rank_correlation,
    spearman,
)

from conftest import flat_curve
from oracles import closed_form_spearman

IDS = ["a", "b", "c", "d"]


def test_spearman_examples():
    ident = Ranking.from_order(IDS)
    assert spearman(ident, ident) == 1.0
    assert spearman(ident, Ranking.from_order(IDS[::-1])) == -1.0
    other = Ranking(tuple(IDS), (1, 3, 2, 4))
    assert spearman(ident, other) == pytest.approx(0.8, abs=1e-12)


def test_spearman_errors():
    with pytest.raises(IdMismatch):
        spearman(Ranking.from_order(["a", "b"]), Ranking.from_order(["a", "c"]))
    with pytest.raises(DegenerateRanking):
        spearman(Ranking(("a", "b"), (1.5, 1.5)), Ranking.from_order(["a", "b"]))
    with pytest.raises(LengthMismatch):
        rank_correlation([1, 2], [1, 2, 3])


def test_spearman_aligns_by_id_not_position():
    a = Ranking(("a", "b", "c"), (1, 2, 3))
    b = Ranking(("c", "b", "a"), (3, 2, 1))
    assert spearman(a, b) == 1.0


perms = st.integers(2, 12).flatmap(lambda n: st.tuples(st.permutations(range(1, n + 1)), st.permutations(range(1, n + 1))))


@given(perms)
def test_tie_free_matches_closed_form(pair):
    x, y = pair
    assert rank_correlation(x, y) == pytest.approx(closed_form_spearman(x, y), abs=1e-12)


rank_vectors = st.integers(2, 10).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n), st.lists(st.integers(0, 4), min_size=n, max_size=n))
)


@given(rank_vectors)
def test_symmetric_and_bounded(pair):
    x, y = (np.array(v, float) for v in pair)
    assume(np.ptp(x) > 0 and np.ptp(y) > 0)
    r = rank_correlation(x, y)
    assert -1.0 <= r <= 1.0
    assert r == pytest.approx(rank_correlation(y, x), abs=1e-12)


@given(rank_vectors)
def test_invariant_under_increasing_transform(pair):
    x, y = (np.array(v, float) for v in pair)
    assume(np.ptp(x) > 0 and np.ptp(y) > 0)
    assert rank_correlation(3 * x + 7, y) == pytest.approx(rank_correlation(x, y), abs=1e-12)


def test_quality_score_value_range():
    with pytest.raises(ValueError):
        QualityScore(1.5, "f", "r")


# --- quality score -------------------------------------------------------------------

FORM = parse_formulation("objective maximize mean(x in [0.9, 1.1])\nconstraint min(x in [0.9, 1.1]) >= -4\n", id="f")
INSTS = [flat_curve(i, v) for i, v in zip("pqrs", (-1.0, -3.0, -2.0, -6.0))]


def test_quality_score_identity():
    ref = induced_ranking(FORM, INSTS, id="ref")
    q = quality_score(FORM, INSTS, ref)
    assert (q.value, q.formulation_id, q.reference_ranking_id) == (1.0, "f", "ref")


def test_quality_score_missing_instance():
    ref = Ranking.from_order(["p", "q", "r"])
    with pytest.raises(IdMismatch):
        quality_score(FORM, INSTS, ref)


# --- alignment -----------------------------------------------------------------------

Z = (0.0, 1.0, 2.0, 3.0)


def two_band(id, a, b):
    return TestInstance.from_arrays(id, Z, [a, a, b, b])


# obj1 sorts like the ground truth; obj2 has rank vector (3, 2, 1, 4, 5) -> rho = 0.6.
ALIGN_INSTS = [two_band(f"i{k}", a, b) for k, (a, b) in enumerate(zip((-1, -2, -3, -4, -5), (-7, -8, -9, -6, -5)), 1)]
ALIGN_FORM = parse_formulation(
    "objective maximize mean(x in [0, 1])\n"
    "objective minimize max(x in [2, 3])\n"
    "constraint min(x in [0, 1]) >= -3.5\n"
    "constraint max(x in [2, 3]) <= -7.5\n"
)
TRUTH = Ranking.from_order([i.id for i in ALIGN_INSTS])
Y_STAR = [1, 1, 1, 0, 0]


def test_alignment_obj_mean_of_correlations():
    assert alignment_obj(ALIGN_FORM, ALIGN_INSTS, TRUTH) == pytest.approx(0.8, abs=1e-12)


def test_alignment_con_mean_of_accuracies():
    # c1 predicts (1,1,1,0,0) exactly; c2 predicts (0,1,1,0,0): accuracy 0.8
    assert alignment_con(ALIGN_FORM, ALIGN_INSTS, Y_STAR) == pytest.approx(0.9, abs=1e-12)


def test_alignment_report():
    rep = alignment_report(ALIGN_FORM, ALIGN_INSTS, TRUTH, Y_STAR, 0.5)
    assert rep.a_total == pytest.approx(0.85, abs=1e-12)
    assert rep.per_item["obj2"] == pytest.approx(0.6, abs=1e-12)
    assert rep.per_item["c2"] == pytest.approx(0.8, abs=1e-12)


def test_single_constraint_two_of_three():
    f = parse_formulation("objective minimize mean(x in [0.9, 1.1])\nconstraint min(x in [0.9, 1.1]) >= -2\n")
    insts = [flat_curve("a", -1.0), flat_curve("b", -3.0), flat_curve("c", -1.5)]
    assert alignment_con(f, insts, [1, 1, 1]) == pytest.approx(2 / 3, abs=1e-12)


def test_alignment_errors():
    only_con = parse_formulation("constraint min(x in [0.9, 1.1]) >= -2\n")
    only_obj = parse_formulation("objective minimize mean(x in [0.9, 1.1])\n")
    insts = [flat_curve("a", -1.0), flat_curve("b", -3.0)]
    with pytest.raises(NoObjectives):
        alignment_obj(only_con, insts, Ranking.from_order(["a", "b"]))
    with pytest.raises(NoConstraints):
        alignment_con(only_obj, insts, [1, 1])
    with pytest.raises(LengthMismatch):
        alignment_con(only_con, insts, [1, 1, 1])


def test_alignment_total_examples_and_bounds():
    assert alignment_total(0.8, 0.6, 0.5).a_total == pytest.approx(0.7, abs=1e-12)
    assert alignment_total(0.8, 0.6, 0.0).a_total == 0.6
    assert alignment_total(0.8, 0.6, 1.0).a_total == 0.8
    for bad in (-0.1, 1.1):
        with pytest.raises(AlphaOutOfRange):
            alignment_total(0.8, 0.6, bad)


@given(st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_alignment_total_is_linear_in_alpha(a_obj, a_con, a1, a2):
    t1 = alignment_total(a_obj, a_con, a1).a_total
    t2 = alignment_total(a_obj, a_con, a2).a_total
    mid = alignment_total(a_obj, a_con, (a1 + a2) / 2).a_total
    assert mid == pytest.approx((t1 + t2) / 2, abs=1e-12)


@given(st.lists(st.floats(-5, 0), min_size=2, max_size=8), st.floats(-5, 0))
def test_flipping_truth_bits_complements_accuracy(levels, t):
    f = parse_formulation(f"objective minimize mean(x in [0.9, 1.1])\nconstraint min(x in [0.9, 1.1]) >= {t!r}\n")
    insts = [flat_curve(f"i{k}", v) for k, v in enumerate(levels)]
    y = [k % 2 for k in range(len(insts))]
    acc = alignment_con(f, insts, y)
    flipped = alignment_con(f, insts, [1 - b for b in y])
    assert 0.0 <= acc <= 1.0
    assert flipped == pytest.approx(1 - acc, abs=1e-12)


def test_every_permutation_of_four_matches_closed_form():
    base = [1, 2, 3, 4]
    for p in itertools.permutations(base):
        assert rank_correlation(base, p) == pytest.approx(closed_form_spearman(base, p), abs=1e-12)

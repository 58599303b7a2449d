import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apf.errors import EmptyBand, InvariantError, NoEligibleItem
from apf.formulation import (
    Agg,
    Band,
    Comparator,
    TestInstance,
    Threshold,
    evaluate_expr,
    feasibility,
    formulation_from_requirements,
    parse_formulation,
)
from apf.ranking import induced_ranking
from apf.pipeline.records import read_jsonl
from apf.scoring import quality_score
from apf.synthbench import (
    DEFAULT_INTENTS,
    FULL_INTENTS,
    LISTING_TASK_INTENTS,
    BandSpec,
    CorruptionKind,
    IntentSpec,
    corrupt_formulation,
    extract_requirements,
    oracle_ranking,
    outward_threshold,
    render_curve,
    synth_pool,
)

from oracles import brute_ranking

EFF = "radiation_efficiency"
designs = st.lists(st.floats(0, 1), min_size=8, max_size=8)


def agg(op, band, inst):
    return evaluate_expr(Agg(op, EFF, band), inst)


# --- curves ----------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(designs, st.integers(0, 100))
def test_curves_are_finite_and_inside_floor(x, seed):
    v = np.array([s[1] for s in render_curve(x, seed=seed, noise_db=0.5).samples])
    assert np.all(np.isfinite(v))
    assert np.all((v > -60.0) & (v < 0.0))


def test_render_is_deterministic():
    x = [0.3, 0.2, 0.8, 0.5, 0.7, 0.4, 0.1, 0.9]
    assert render_curve(x, seed=3, noise_db=0.2) == render_curve(x, seed=3, noise_db=0.2)
    assert synth_pool(3, 4, seed=5) == synth_pool(3, 4, seed=5)


def test_render_arguments():
    with pytest.raises(InvariantError):
        render_curve([0.5] * 8, n_samples=20)
    with pytest.raises(InvariantError):
        render_curve([0.5] * 4)


@given(designs, st.floats(0, 1), st.floats(0, 1))
def test_ripple_moves_band_means_within_its_amplitude(x, r1, r2):
    spec = BandSpec()
    a = render_curve([*x[:5], r1, *x[6:]])
    b = render_curve([*x[:5], r2, *x[6:]])
    for _, band in spec.bands():
        assert abs(agg("mean", band, a) - agg("mean", band, b)) <= 0.8 * abs(r1 - r2) + 1e-9


def test_hand_tuned_design_meets_task_constraints():
    # passband min -3, low stopband max -6, high null min -15
    c = render_curve([0.6714, 0.9998, 0.5, 0.5, 0.0438, 0.0, 0.5, 0.0])
    spec = BandSpec()
    assert agg("min", spec.passband, c) == pytest.approx(-3.0, abs=0.01)
    assert agg("max", spec.low_stopband, c) == pytest.approx(-6.0, abs=0.01)
    assert agg("min", spec.high_null, c) == pytest.approx(-15.0, abs=0.01)
    f = parse_formulation((
        "constraint min(radiation_efficiency in [0.95, 1.08]) >= -4.49\n"
        "constraint max(radiation_efficiency in [0.8, 0.92]) <= -4.39\n"
        "constraint min(radiation_efficiency in [1.08, 1.12]) <= -11.74\n"
    ))
    assert feasibility(f, c)[0]


def test_band_spec_checks_and_round_trip():
    with pytest.raises(InvariantError):
        BandSpec(passband=Band(0.90, 1.08))
    with pytest.raises(InvariantError):
        BandSpec(z_min=0.85)
    spec = BandSpec(high_stopband=Band(1.12, 1.22))
    assert BandSpec.from_dict(spec.to_dict()) == spec


def test_default_grid_covers_narrowest_band():
    c = render_curve([0.5] * 8)
    spec = BandSpec()
    for _, band in spec.bands():
        assert sum(band.lo <= z <= band.hi for z, _ in c.samples) >= 5


# --- requirement extraction -------------------------------------------------------------


@pytest.mark.parametrize(
    "realized, offset, cmp, expected",
    [
        (-4.485, 0.0, Comparator.GE, -4.49),
        (-4.395, 0.0, Comparator.LE, -4.39),
        (-4.49, 0.0, Comparator.GE, -4.50),
        (-4.39, 0.0, Comparator.LE, -4.38),
        (-3.0, 0.5, Comparator.GE, -3.5),
    ],
)
def test_outward_threshold(realized, offset, cmp, expected):
    assert outward_threshold(realized, offset, cmp, 2) == pytest.approx(expected, abs=1e-12)


def test_listing_scenario_thresholds(data_dir):
    curves = {d["id"]: TestInstance.from_dict(d) for d in read_jsonl(data_dir / "antenna_curves.jsonl")}
    reqs = extract_requirements(curves["curve_e"], BandSpec(), LISTING_TASK_INTENTS, id="listing")
    values = [r.intent.value for r in reqs.requirements if isinstance(r.intent, Threshold)]
    assert values == [-4.49, -4.39, -11.74]
    reference = parse_formulation((data_dir / "formulations" / "reference.apf").read_text(), id="listing")
    assert formulation_from_requirements(reqs) == reference


@settings(max_examples=40, deadline=None)
@given(designs, st.sampled_from([LISTING_TASK_INTENTS, DEFAULT_INTENTS, FULL_INTENTS]), st.integers(0, 9))
def test_source_is_strictly_feasible(x, intents, seed):
    src = render_curve(x)
    reqs = extract_requirements(src, intent_spec=intents, seed=seed)
    feasible, violation = feasibility(formulation_from_requirements(reqs), src)
    assert feasible and violation == 0.0


def test_requirement_texts_carry_the_numbers():
    src = render_curve([0.5] * 8)
    reqs = extract_requirements(src, intent_spec=LISTING_TASK_INTENTS)
    for r in reqs.requirements:
        assert r.band is not None and r.text
        if isinstance(r.intent, Threshold):
            assert f"{r.intent.value:g}" in r.text


def test_null_band_narrower_than_spacing_is_empty():
    spec = BandSpec(high_null=Band(1.101, 1.103))
    src = render_curve([0.5] * 8, spec, n_samples=50)
    with pytest.raises(EmptyBand):
        extract_requirements(src, spec, FULL_INTENTS)


def test_intent_spec_round_trip():
    assert IntentSpec.from_dict(DEFAULT_INTENTS.to_dict()) == DEFAULT_INTENTS


# --- oracle ranking -------------------------------------------------------------------------


def family(seed=0, size=10):
    return synth_pool(1, size, seed)


def test_oracle_matches_pairwise_ranking():
    for seed in range(5):
        insts = family(seed, 8)
        reqs = extract_requirements(insts[0], intent_spec=DEFAULT_INTENTS, seed=seed)
        f = formulation_from_requirements(reqs)
        objs, feas, viol = [], [], []
        for inst in insts:
            ok, v = feasibility(f, inst)
            objs.append([-agg("mean", BandSpec().passband, inst)])
            feas.append(ok)
            viol.append(v)
        assert list(oracle_ranking(reqs, insts).ranks) == brute_ranking(objs, feas, viol)


def test_ground_truth_scores_one_against_oracle():
    insts = family(1)
    reqs = extract_requirements(insts[0])
    q = quality_score(formulation_from_requirements(reqs), insts, oracle_ranking(reqs, insts))
    assert q.value == 1.0


# --- corruption ----------------------------------------------------------------------------


def test_perturb_zero_is_identity():
    f = formulation_from_requirements(extract_requirements(render_curve([0.5] * 8)))
    g, meta = corrupt_formulation(f, CorruptionKind.PERTURB_THRESHOLD, factor=0.0)
    assert g == f and meta["kind"] == "perturb_threshold"


def test_swap_on_constant_band_keeps_residuals():
    f = parse_formulation("constraint min(radiation_efficiency in [0.95, 1.08]) >= -4.49\n")
    g, meta = corrupt_formulation(f, CorruptionKind.SWAP_AGG)
    assert (meta["from"], meta["to"]) == ("min", "mean")
    flat = TestInstance.from_arrays("flat", [0.9, 0.95, 1.0, 1.08, 1.1], [-9, -3, -3, -3, -9])
    assert evaluate_expr(g.items[0].expr, flat) == evaluate_expr(f.items[0].expr, flat)


def test_flip_inverts_feasibility_around_threshold():
    f = parse_formulation("constraint min(radiation_efficiency in [0.95, 1.08]) >= -4.49\n")
    g, _ = corrupt_formulation(f, CorruptionKind.FLIP_COMPARATOR)
    for level in (-5.0, -4.0, -3.2, -6.5):
        inst = TestInstance.from_arrays("c", [0.95, 1.0, 1.08], [level] * 3)
        assert feasibility(f, inst)[0] != feasibility(g, inst)[0]


def test_shift_moves_band_by_its_width():
    f = parse_formulation("constraint max(radiation_efficiency in [0.8, 0.92]) <= -4.39\n")
    g, meta = corrupt_formulation(f, CorruptionKind.SHIFT_BAND, seed=2)
    band = g.items[0].expr.left.band
    assert abs(meta["shift"]) == pytest.approx(0.12)
    assert band.width == pytest.approx(0.12)
    assert band != Band(0.8, 0.92)


def test_no_eligible_item():
    f = parse_formulation("objective maximize mean(radiation_efficiency in [0.95, 1.08])\n")
    with pytest.raises(NoEligibleItem):
        corrupt_formulation(f, CorruptionKind.FLIP_COMPARATOR)
    with pytest.raises(NoEligibleItem):
        corrupt_formulation(f, CorruptionKind.PERTURB_THRESHOLD)


@pytest.mark.parametrize("kind", list(CorruptionKind))
def test_every_kind_is_detectable_on_some_seeded_family(kind):
    changed = False
    for seed in range(10):
        insts = family(seed)
        reqs = extract_requirements(insts[0], intent_spec=DEFAULT_INTENTS, seed=seed)
        f = formulation_from_requirements(reqs)
        g, meta = corrupt_formulation(f, kind, seed, factor=0.5)
        assert meta["kind"] == kind.value
        assert sum(a != b for a, b in zip(f.items, g.items)) == 1
        if induced_ranking(g, insts).ranks != induced_ranking(f, insts).ranks:
            changed = True
            break
    assert changed

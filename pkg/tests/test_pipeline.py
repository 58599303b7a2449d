import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apf.errors import ProviderError, RoundTripError, TooFewInstances
from apf.formulation import feasibility, formulation_from_requirements, parse_formulation
from apf.llm import MockProvider
from apf.pipeline import (
    DatasetRecord,
    annotate_references,
    augment,
    augment_all,
    derive_requirements,
    export_sft,
    generate_base,
    nearest_instances,
    read_jsonl,
    report_scores,
    score_and_select,
    score_records,
    select,
    select_test_instances,
    write_jsonl,
)
import apf.pipeline.stages as stages
from apf.pipeline.stages import derive_with_sources, numbers_in, sft_rows, unpermute
from apf.synthbench import DEFAULT_INTENTS, oracle_ranking, synth_pool

POOL = synth_pool(12, 10, seed=0)
PAIRS = derive_with_sources(POOL, DEFAULT_INTENTS, 0, n_sets=12)
REQSETS = [rs for rs, _ in PAIRS]
SETS = select_test_instances(PAIRS, POOL, 10)
PER_SET = {rs.id: insts for rs, insts in zip(REQSETS, SETS)}


def provider(mode="faithful", **kw):
    m = MockProvider(mode, seed=0, **kw)
    m.register(REQSETS, POOL)
    return m


def faithful_base():
    records, failures = generate_base(REQSETS, provider())
    assert not failures
    return records


# --- derive -----------------------------------------------------------------------------------


def test_derive_is_deterministic_and_solvable():
    again = derive_requirements(POOL, DEFAULT_INTENTS, 0, n_sets=12)
    assert again == REQSETS
    assert [rs.id for rs in REQSETS] == [f"r{i:05d}" for i in range(12)]
    for rs, src in PAIRS:
        assert feasibility(formulation_from_requirements(rs), src)[0]


def test_source_sampling_depends_on_seed():
    a = [src.id for _, src in derive_with_sources(POOL, DEFAULT_INTENTS, 1, n_sets=5)]
    b = [src.id for _, src in derive_with_sources(POOL, DEFAULT_INTENTS, 2, n_sets=5)]
    assert len(set(a)) == 5 and a != b


def test_test_sets_contain_source_and_are_balanced():
    for (rs, src), insts in zip(PAIRS, SETS):
        ids = [i.id for i in insts]
        assert len(ids) == 10 and len(set(ids)) == 10
        assert src.id in ids and ids == sorted(ids)
        f = formulation_from_requirements(rs)
        n_feasible = sum(feasibility(f, i)[0] for i in insts)
        assert 1 <= n_feasible <= 9


def test_nearest_instances():
    sets = nearest_instances(POOL[:3], POOL, 4)
    for src, group in zip(POOL[:3], sets):
        assert group[0] is src and len(group) == 4 and src not in group[1:]
    with pytest.raises(TooFewInstances):
        nearest_instances(POOL[:1], POOL, 1)


# --- generate / annotate ---------------------------------------------------------------------


def test_generate_faithful():
    records = faithful_base()
    assert [r.id for r in records] == [rs.id for rs in REQSETS]
    assert all(r.formulation == formulation_from_requirements(r.requirement_set) for r in records)


class Down:
    max_concurrency = 2

    def complete(self, prompt):
        raise ProviderError("offline")


def test_provider_down_never_aborts():
    records, failures = generate_base(REQSETS, Down())
    assert records == [] and len(failures) == len(REQSETS)
    assert {f.error for f in failures} == {"ProviderError"}


def test_annotate_faithful_matches_oracle():
    rankings, failures = annotate_references(REQSETS, PER_SET, provider())
    assert not failures
    for rs in REQSETS:
        assert rankings[rs.id].order() == oracle_ranking(rs, PER_SET[rs.id]).order()


def test_annotate_noisy_is_one_transposition_away():
    rankings, _ = annotate_references(REQSETS, PER_SET, provider("noisy", k=1))
    for rs in REQSETS:
        truth, got = oracle_ranking(rs, PER_SET[rs.id]).order(), rankings[rs.id].order()
        diff = [i for i, (a, b) in enumerate(zip(truth, got)) if a != b]
        assert len(diff) == 2 and diff[1] == diff[0] + 1


class Flaky:
    """Returns garbage on the first call per prompt, then delegates."""

    max_concurrency = 1

    def __init__(self, inner):
        self.inner, self.seen = inner, set()

    def complete(self, prompt):
        key = prompt.render()
        if key not in self.seen:
            self.seen.add(key)
            return '["nope"]'
        return self.inner.complete(prompt)


def test_annotate_retries_invalid_permutation_once():
    rankings, failures = annotate_references(REQSETS[:2], PER_SET, Flaky(provider()))
    assert not failures and len(rankings) == 2


def test_annotate_records_too_few_instances():
    per_set = dict(PER_SET)
    per_set[REQSETS[0].id] = PER_SET[REQSETS[0].id][:1]
    rankings, failures = annotate_references(REQSETS[:2], per_set, provider())
    assert REQSETS[0].id not in rankings
    assert [(f.id, f.error) for f in failures] == [(REQSETS[0].id, "TooFewInstances")]


# --- score / select ---------------------------------------------------------------------------


def rankings_for(records):
    return {r.id: oracle_ranking(r.requirement_set, PER_SET[r.id]) for r in records}


def test_faithful_corpus_is_fully_retained():
    base = faithful_base()
    retained, scored, report = score_and_select(base, rankings_for(base), PER_SET)
    assert all(r.score == 1.0 for r in scored)
    assert report["retention_rate"] == 1.0 and len(retained) == len(base)
    hist = report_scores(scored)
    assert hist.counts[-1] == len(base) and sum(hist.counts) == len(base)


def fake_scored(scores, children=5):
    rs = REQSETS[0]
    f = formulation_from_requirements(rs)
    out = []
    for k, s in enumerate(scores):
        base = DatasetRecord(f"b{k}", f"b{k}", rs, f, s)
        out.append(base)
        for j in range(children):
            perm = tuple(range(len(f.items)))
            out.append(DatasetRecord(f"b{k}-a{j:02d}", f"b{k}", rs, f, s, True, perm))
    return out


def test_threshold_drops_children_with_base():
    retained, report = select(fake_scored([0.69, 1.0]), 0.7)
    assert {r.base_id for r in retained} == {"b1"}
    assert len(retained) == 6
    assert (report["retained_base"], report["scored_base"]) == (1, 2)


@given(st.lists(st.floats(-1, 1), max_size=10), st.floats(-1, 1), st.floats(-1, 1))
def test_retention_is_monotone_in_threshold(scores, t1, t2):
    lo, hi = sorted((t1, t2))
    records = fake_scored(scores, children=1)
    assert len(select(records, hi)[0]) <= len(select(records, lo)[0])


def test_missing_ranking_is_recorded():
    base = faithful_base()
    rankings = rankings_for(base)
    del rankings[base[0].id]
    scored, failures = score_records(base, rankings, PER_SET)
    assert [f.id for f in failures] == [base[0].id]
    assert len(scored) == len(base) - 1


def test_children_without_scored_base_are_orphans():
    records = fake_scored([None], children=2)[1:]
    scored, failures = score_records(records, {}, PER_SET)
    assert scored == [] and {f.error for f in failures} == {"OrphanedRecord"}


def test_corrupted_records_score_lower():
    m = provider("corrupt", p=1.0)
    base, _ = generate_base(REQSETS, m)
    _, scored, _ = score_and_select(base, rankings_for(base), PER_SET)
    assert sum(r.score < 0.7 for r in scored) >= len(scored) // 2


# --- augment ------------------------------------------------------------------------------------


def test_augment_children_and_tandem_permutation():
    rec = faithful_base()[0]
    children = augment(rec, 3, 5, provider(), seed=0)
    n = len(rec.formulation.items)
    assert [c.id for c in children] == [f"{rec.id}-a{j:02d}" for j in range(1, 6)]
    for c in children:
        assert c.augmented and c.base_id == rec.id
        assert sorted(c.permutation) == list(range(n))
        assert unpermute(c) == rec.formulation.items
        # child item j is the compiled form of child requirement j
        compiled = formulation_from_requirements(c.requirement_set)
        assert [it.expr for it in c.formulation.items] == [it.expr for it in compiled.items]
        for j, p in enumerate(c.permutation):
            assert numbers_in(c.requirement_set.requirements[j].text) == numbers_in(rec.requirement_set.requirements[p].text)
    combos = {tuple(r.text for _, r in sorted(zip(c.permutation, c.requirement_set.requirements))) for c in children}
    assert len(combos) == 5


def test_augment_is_deterministic():
    rec = faithful_base()[1]
    assert augment(rec, 3, 5, provider(), seed=4) == augment(rec, 3, 5, provider(), seed=4)


def test_augment_budget_and_arguments():
    rec = faithful_base()[0]
    with pytest.raises(ValueError):
        augment(rec, 0, 5, provider())
    with pytest.raises(ValueError):
        augment(rec, 1, 25, provider())  # 1^4 * 4! = 24
    assert len(augment(rec, 1, 24, provider())) == 24


class Garbled:
    max_concurrency = 1

    def complete(self, prompt):
        return '{"1": ["changed number 999"], "2": "bad"}'


def test_paraphrase_fallback_is_flagged():
    rec = faithful_base()[0]
    children = augment(rec, 3, 2, Garbled())
    flags = set(children[0].flags)
    assert {"fallback:1", "fallback:2", "fallback:3", "fallback:4"} <= flags


def test_augment_all_orders_by_id():
    base = faithful_base()[:3]
    out, failures = augment_all(base, 3, 5, provider())
    assert not failures and len(out) == 18
    assert [r.id for r in out] == sorted(r.id for r in out)


# --- export / report -------------------------------------------------------------------------------


def test_export_round_trip(tmp_path):
    base = faithful_base()[:2]
    records, _ = augment_all([r.with_score(1.0) for r in base], 3, 5, provider())
    path = tmp_path / "sft.jsonl"
    assert export_sft(records, path) == 12
    rows = list(read_jsonl(path))
    for row, rec in zip(rows, sorted(records, key=lambda r: r.id)):
        assert parse_formulation(row["output"], id=rec.formulation.id) == rec.formulation
        assert row["meta"] == {"id": rec.id, "score": 1.0, "base_id": rec.base_id, "augmented": rec.augmented}


def test_export_empty(tmp_path):
    path = tmp_path / "sft.jsonl"
    assert export_sft([], path) == 0
    assert path.read_text() == ""


def test_export_aborts_on_round_trip_failure(tmp_path, monkeypatch):
    rec = faithful_base()[0]
    monkeypatch.setattr(stages, "print_formulation", lambda f: "objective maximise nothing\n")
    path = tmp_path / "sft.jsonl"
    with pytest.raises(RoundTripError) as exc:
        export_sft([rec], path)
    assert exc.value.record_id == rec.id
    assert not path.exists()


def test_jsonl_is_atomic(tmp_path):
    path = tmp_path / "x.jsonl"

    def rows():
        yield {"a": 1}
        raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        write_jsonl(path, rows())
    assert not path.exists()
    assert (tmp_path / "x.jsonl.partial").read_text() == '{"a": 1}\n'


def test_record_dict_round_trip():
    rec = augment(faithful_base()[0], 3, 1, provider())[0]
    assert DatasetRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec


def test_histogram_bins():
    rs = REQSETS[0]
    f = formulation_from_requirements(rs)
    scores = [-1.0, -0.95, 0.0, 0.69, 0.7, 0.7, 1.0, None]
    hist = report_scores([DatasetRecord(f"r{i}", f"r{i}", rs, f, s) for i, s in enumerate(scores)])
    assert hist.total == 7 and hist.skipped == 1
    assert hist.counts[0] == 2 and hist.counts[10] == 1 and hist.counts[16] == 1
    assert hist.counts[17] == 2 and hist.counts[19] == 1
    assert sum(hist.proportions) == pytest.approx(1.0)
    assert report_scores([]).counts == [0] * 20
    assert "total=7" in hist.render_text()

"""Pipeline stages: derive, generate, annotate, score, select, augment, export."""

from __future__ import annotations

import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from apf.errors import ApfError, DataError, ProviderError, ResponseParseError, RoundTripError, TooFewInstances
from apf.formulation import (
    RequirementSet,
    TestInstance,
    feasibility,
    formulation_from_requirements,
    parse_formulation,
    print_formulation,
)
from apf.llm.parsing import parse_annotation_response, parse_generation_response, parse_paraphrase_response
from apf.llm.prompts import build_annotation_prompt, build_generation_prompt, build_paraphrase_prompt, requirements_text
from apf.pipeline.records import DatasetRecord, SftSample, write_jsonl
from apf.ranking import Ranking
from apf.scoring import quality_score
from apf.synthbench import DEFAULT_INTENTS, BandSpec, IntentSpec, extract_requirements

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

SFT_INSTRUCTION_VERSION = "v1"
SFT_INSTRUCTION = (
    "Translate the following numbered engineering design requirements into an optimization "
    "formulation. Write one item per line in requirement order. Objectives are minimized "
    "(use 'objective maximize <agg>' to maximize a metric); constraints are satisfied when "
    "their residual is < 0 (write '<agg> >= t' or '<agg> <= t' for thresholds)."
)

# LoRA fine-tuning settings reported for the reference run; exported as metadata only.
SFT_HYPERPARAMETERS = {
    "lora_dropout": 0.05,
    "lora_r": 16,
    "lora_alpha": 32,
    "learning_rate": 2.0e-4,
    "batch_size": 16,
    "max_length": 1600,
    "epochs": 2,
}


@dataclass
class Failure:
    id: str
    stage: str
    error: str
    reason: str
    provider: bool = False

    def to_dict(self) -> dict:
        return {"id": self.id, "stage": self.stage, "error": self.error, "reason": self.reason}


def _failure(id: str, stage: str, exc: Exception) -> Failure:
    return Failure(id, stage, type(exc).__name__, str(exc), isinstance(exc, ProviderError))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    """Order-preserving map; runs inline when ``workers <= 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- derive ------------------------------------------------------------------


def sample_sources(insts: Sequence[TestInstance], n_sets: int | None, seed: int) -> list[TestInstance]:
    """Pick ``n_sets`` source curves without replacement (all of them when None)."""
    if n_sets is None or n_sets >= len(insts):
        return list(insts)
    idx = sorted(random.Random(f"sources:{seed}").sample(range(len(insts)), n_sets))
    return [insts[i] for i in idx]


def derive_with_sources(
    insts: Sequence[TestInstance],
    intent_spec: IntentSpec = DEFAULT_INTENTS,
    seed: int = 0,
    *,
    band_spec: BandSpec | None = None,
    n_sets: int | None = None,
) -> list[tuple[RequirementSet, TestInstance]]:
    sources = sample_sources(insts, n_sets, seed)
    return [
        (extract_requirements(src, band_spec, intent_spec, seed, id=f"r{i:05d}"), src)
        for i, src in enumerate(sources)
    ]


def derive_requirements(
    insts: Sequence[TestInstance],
    intent_spec: IntentSpec = DEFAULT_INTENTS,
    seed: int = 0,
    *,
    band_spec: BandSpec | None = None,
    n_sets: int | None = None,
) -> list[RequirementSet]:
    """One requirement set per sampled curve, satisfied by that curve."""
    return [rs for rs, _ in derive_with_sources(insts, intent_spec, seed, band_spec=band_spec, n_sets=n_sets)]


def _value_matrix(pool: Sequence[TestInstance], grid: np.ndarray) -> np.ndarray:
    rows = []
    for inst in pool:
        if inst.z.shape == grid.shape and np.array_equal(inst.z, grid):
            rows.append(inst.values)
        else:
            rows.append(np.interp(grid, inst.z, inst.values))
    return np.vstack(rows)


def _nearest_indices(sources: Sequence[TestInstance], pool: Sequence[TestInstance], m: int, chunk: int = 256):
    """Per source, indices of its ``m`` nearest pool curves (L2 on values), excluding itself."""
    grid = sources[0].z
    P = _value_matrix(pool, grid)
    p2 = (P * P).sum(1)
    pool_pos = {inst.id: j for j, inst in enumerate(pool)}
    m = min(m, len(pool))
    out = []
    for start in range(0, len(sources), chunk):
        block = sources[start : start + chunk]
        S = _value_matrix(block, grid)
        d2 = (S * S).sum(1)[:, None] - 2.0 * S @ P.T + p2[None, :]
        for row, src in zip(d2, block):
            if src.id in pool_pos:
                row[pool_pos[src.id]] = np.inf
            top = np.argpartition(row, m - 1)[:m] if m < len(row) else np.arange(len(row))
            top = top[np.lexsort((top, row[top]))]
            out.append([int(j) for j in top if np.isfinite(row[j])])
    return out


def nearest_instances(sources: Sequence[TestInstance], pool: Sequence[TestInstance], k: int) -> list[list[TestInstance]]:
    """Each source followed by its ``k - 1`` nearest pool curves."""
    if k < 2:
        raise TooFewInstances("test sets need at least 2 instances")
    if not sources:
        return []
    return [[src] + [pool[j] for j in idx] for src, idx in zip(sources, _nearest_indices(sources, pool, k - 1))]


def select_test_instances(
    pairs: Sequence[tuple[RequirementSet, TestInstance]],
    pool: Sequence[TestInstance],
    k: int = 10,
    *,
    n_feasible: int = 8,
    candidates: int = 500,
    tol: float = 0.0,
) -> list[list[TestInstance]]:
    """Test set per requirement set: the source plus ``k - 1`` nearby curves.

    Among the ``candidates`` nearest pool curves, up to ``n_feasible`` that
    satisfy the requirements are taken first, then the nearest violators;
    shortfalls in either group are topped up from the other. A set that is
    mostly feasible lets the objectives shape the ranking, and the violators
    keep the constraints visible. Sets come back sorted by instance id so
    position leaks nothing about quality.
    """
    if k < 2:
        raise TooFewInstances("test sets need at least 2 instances")
    if not pairs:
        return []
    sources = [src for _, src in pairs]
    neighbours = _nearest_indices(sources, pool, max(candidates, k - 1))
    out = []
    for (rs, src), idx in zip(pairs, neighbours):
        f = formulation_from_requirements(rs)
        feasible, violating = [], []
        for j in idx:
            (feasible if feasibility(f, pool[j], tol=tol)[0] else violating).append(pool[j])
            if len(feasible) >= n_feasible and len(violating) >= k - 1 - n_feasible:
                break
        n_f = min(len(feasible), n_feasible)
        chosen = feasible[:n_f] + violating[: k - 1 - n_f]
        chosen += feasible[n_f : n_f + k - 1 - len(chosen)]
        out.append(sorted([src] + chosen, key=lambda inst: inst.id))
    return out


# --- generate / annotate -----------------------------------------------------


def generate_base(reqsets: Sequence[RequirementSet], provider, *, workers: int | None = None) -> tuple[list[DatasetRecord], list[Failure]]:
    """Ask the provider for one formulation per requirement set.

    Failures are collected per record and never abort the batch.
    """

    def one(rs: RequirementSet):
        try:
            text = provider.complete(build_generation_prompt(rs))
            f = parse_generation_response(text, rs, id=rs.id)
            return DatasetRecord(rs.id, rs.id, rs, f)
        except ApfError as exc:
            return _failure(rs.id, "generate", exc)

    results = parallel_map(one, list(reqsets), workers or provider.max_concurrency)
    records = [r for r in results if isinstance(r, DatasetRecord)]
    failures = [r for r in results if isinstance(r, Failure)]
    return records, failures


def annotate_references(
    reqsets: Sequence[RequirementSet],
    insts_per_set: dict[str, Sequence[TestInstance]],
    provider,
    *,
    workers: int | None = None,
    prompt_budget: int | None = None,
) -> tuple[dict[str, Ranking], list[Failure]]:
    """Reference ranking per set; an invalid permutation is retried once."""
    kw = {} if prompt_budget is None else {"budget": prompt_budget}

    def one(rs: RequirementSet):
        try:
            insts = list(insts_per_set.get(rs.id, ()))
            prompt = build_annotation_prompt(rs, insts, **kw)
            ids = [inst.id for inst in insts]
            for attempt in (1, 2):
                text = provider.complete(prompt)
                try:
                    return rs.id, parse_annotation_response(text, ids, ranking_id=f"llm-{rs.id}").ranking
                except ResponseParseError:
                    if attempt == 2:
                        raise
        except ApfError as exc:
            return _failure(rs.id, "annotate", exc)

    results = parallel_map(one, list(reqsets), workers or provider.max_concurrency)
    rankings = dict(r for r in results if isinstance(r, tuple))
    failures = [r for r in results if isinstance(r, Failure)]
    return rankings, failures


# --- score / select ------------------------------------------------------------


def score_records(
    records: Sequence[DatasetRecord],
    rankings: dict[str, Ranking],
    insts_per_set: dict[str, Sequence[TestInstance]],
    **rank_kw,
) -> tuple[list[DatasetRecord], list[Failure]]:
    """Score base records; augmented children inherit their base's score."""
    scored: dict[str, DatasetRecord] = {}
    failures = []
    for rec in records:
        if rec.augmented:
            continue
        try:
            if rec.base_id not in rankings:
                raise DataError(f"no reference ranking for set {rec.base_id!r}")
            if rec.base_id not in insts_per_set:
                raise DataError(f"no test instances for set {rec.base_id!r}")
            s = quality_score(rec.formulation, insts_per_set[rec.base_id], rankings[rec.base_id], **rank_kw)
            scored[rec.id] = rec.with_score(s.value)
        except ApfError as exc:
            failures.append(_failure(rec.id, "score", exc))
    out = []
    for rec in records:
        if rec.augmented:
            base = scored.get(rec.base_id)
            if base is None:
                failures.append(Failure(rec.id, "score", "OrphanedRecord", f"base {rec.base_id!r} has no score"))
                continue
            out.append(rec.with_score(base.score))
        elif rec.id in scored:
            out.append(scored[rec.id])
    return out, failures


def select(scored: Sequence[DatasetRecord], threshold: float = 0.7) -> tuple[list[DatasetRecord], dict]:
    """Keep base records scoring at least ``threshold`` and only their children."""
    kept_bases = {r.id for r in scored if not r.augmented and r.score is not None and r.score >= threshold}
    retained = [r for r in scored if (r.base_id in kept_bases)]
    n_base = sum(1 for r in scored if not r.augmented)
    report = {
        "threshold": threshold,
        "scored_base": n_base,
        "retained_base": len(kept_bases),
        "scored_total": len(scored),
        "retained_total": len(retained),
        "retention_rate": (len(kept_bases) / n_base) if n_base else 0.0,
    }
    return retained, report


def score_and_select(records, rankings, insts_per_set, threshold: float = 0.7, **rank_kw):
    """Score then select; returns ``(retained, scored, report)``."""
    scored, failures = score_records(records, rankings, insts_per_set, **rank_kw)
    retained, report = select(scored, threshold)
    report["failures"] = [f.to_dict() for f in failures]
    return retained, scored, report


# --- augment -------------------------------------------------------------------

_NUMBER_RE = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?")


def numbers_in(text: str) -> list[float]:
    return sorted(float(m) for m in _NUMBER_RE.findall(text.replace("−", "-")))


def _decode(index: int, radices: Sequence[int]) -> list[int]:
    digits = []
    for r in radices:
        index, d = divmod(index, r)
        digits.append(d)
    return digits


def _nth_permutation(index: int, n: int) -> list[int]:
    pool = list(range(n))
    out = []
    for i in range(n, 0, -1):
        f = math.factorial(i - 1)
        q, index = divmod(index, f)
        out.append(pool.pop(q))
    return out


def paraphrase_options(record: DatasetRecord, v: int, provider) -> tuple[list[list[str]], list[str]]:
    """Up to ``v`` verified rewordings per requirement, plus flags for fallbacks."""
    reqs = record.requirement_set.requirements
    flags = []
    try:
        variants = parse_paraphrase_response(provider.complete(build_paraphrase_prompt(record.requirement_set, v)))
    except ApfError as exc:
        variants = {}
        flags.append(f"paraphrase_failed:{type(exc).__name__}")
    options = []
    for i, req in enumerate(reqs, start=1):
        want = numbers_in(req.text)
        good = []
        for text in variants.get(i, [])[:v]:
            if numbers_in(text) == want and text not in good:
                good.append(text)
        if not good:
            good = [req.text]
            flags.append(f"fallback:{i}")
        elif len(good) < v:
            flags.append(f"short:{i}")
        options.append(good)
    return options, flags


def augment(record: DatasetRecord, v: int, l: int, provider, seed: int = 0) -> list[DatasetRecord]:
    """``l`` children: sampled paraphrase combinations, each permuted in tandem."""
    if v < 1 or l < 1:
        raise ValueError("v and l must both be >= 1")
    reqs = record.requirement_set.requirements
    n = len(reqs)
    if len(record.formulation.items) != n:
        raise DataError(f"record {record.id!r}: {len(record.formulation.items)} items for {n} requirements")
    if l > v**n * math.factorial(n):
        raise ValueError(f"l={l} exceeds the combination budget v^n*n! = {v**n * math.factorial(n)}")
    options, flags = paraphrase_options(record, v, provider)
    radices = [len(o) for o in options]
    space = math.prod(radices)
    rng = random.Random(f"augment:{seed}:{record.id}")
    if l <= space:
        picks = [(c, rng.sample(range(n), n)) for c in rng.sample(range(space), l)]
    else:
        joint = rng.sample(range(space * math.factorial(n)), l)
        picks = [(j % space, _nth_permutation(j // space, n)) for j in joint]
    children = []
    for j, (combo, perm) in enumerate(picks, start=1):
        choice = _decode(combo, radices)
        texts = [options[i][choice[i]] for i in range(n)]
        child_id = f"{record.id}-a{j:02d}"
        child_reqs = RequirementSet(child_id, tuple(reqs[p].with_text(texts[p]) for p in perm))
        child_f = record.formulation.permuted(perm).with_id(child_id)
        children.append(
            DatasetRecord(child_id, record.id, child_reqs, child_f, record.score, True, tuple(perm), tuple(flags))
        )
    return children


def augment_all(records: Sequence[DatasetRecord], v: int, l: int, provider, seed: int = 0, *, workers: int | None = None):
    """Base records followed by their children, ordered by record id."""

    def one(rec):
        try:
            return augment(rec, v, l, provider, seed), None
        except (ApfError, ValueError) as exc:
            return [], _failure(rec.id, "augment", exc)

    bases = [r for r in records if not r.augmented]
    results = parallel_map(one, bases, workers or provider.max_concurrency)
    out = list(records)
    failures = []
    for children, failure in results:
        out.extend(children)
        if failure:
            failures.append(failure)
    return sorted(out, key=lambda r: r.id), failures


def unpermute(child: DatasetRecord):
    """Recover the base item order from a child's stored permutation."""
    items = [None] * len(child.permutation)
    for j, p in enumerate(child.permutation):
        items[p] = child.formulation.items[j]
    return tuple(items)


# --- export / report -------------------------------------------------------------


def sft_sample(rec: DatasetRecord) -> SftSample:
    return SftSample(
        instruction=SFT_INSTRUCTION,
        input=requirements_text(rec.requirement_set),
        output=print_formulation(rec.formulation),
        meta={"id": rec.id, "score": rec.score, "base_id": rec.base_id, "augmented": rec.augmented},
    )


def sft_rows(records: Iterable[DatasetRecord]) -> Iterable[dict]:
    for rec in sorted(records, key=lambda r: r.id):
        sample = sft_sample(rec)
        try:
            back = parse_formulation(sample.output, id=rec.formulation.id)
        except ApfError as exc:
            raise RoundTripError(rec.id, f"output does not parse: {exc}") from None
        if back != rec.formulation:
            raise RoundTripError(rec.id, "output reparses to a different formulation")
        yield sample.to_dict()


def export_sft(records: Iterable[DatasetRecord], path) -> int:
    """Write SFT rows (JSON lines); any round-trip failure aborts the export."""
    return write_jsonl(path, sft_rows(records))


@dataclass
class ScoreHistogram:
    edges: list[float]
    counts: list[int]
    total: int
    skipped: int = 0

    @property
    def proportions(self) -> list[float]:
        return [c / self.total if self.total else 0.0 for c in self.counts]

    def rows(self) -> list[dict]:
        return [
            {"lo": lo, "hi": hi, "count": c, "proportion": p}
            for lo, hi, c, p in zip(self.edges[:-1], self.edges[1:], self.counts, self.proportions)
        ]

    def render_text(self) -> str:
        lines = [f"{'bin':>15}  {'count':>6}  {'share':>6}"]
        for row in self.rows():
            close = "]" if row["hi"] == self.edges[-1] else ")"
            label = f"[{row['lo']:+.1f}, {row['hi']:+.1f}{close}"
            bar = "#" * round(40 * row["proportion"])
            lines.append(f"{label:>15}  {row['count']:>6}  {row['proportion']:>6.3f}  {bar}")
        lines.append(f"total={self.total} unscored={self.skipped}")
        return "\n".join(lines)


def report_scores(records: Iterable[DatasetRecord]) -> ScoreHistogram:
    """Histogram of scores in 20 bins of width 0.1 over [-1, 1] (last bin closed)."""
    edges = [round(-1.0 + 0.1 * i, 1) for i in range(21)]
    counts = [0] * 20
    total = skipped = 0
    for rec in records:
        if rec.score is None:
            skipped += 1
            continue
        idx = math.floor(round((rec.score + 1.0) * 10.0, 9))
        counts[min(max(idx, 0), 19)] += 1
        total += 1
    return ScoreHistogram(edges, counts, total, skipped)

"""File-backed stage runners shared by the CLI subcommands.

Every stage reads its inputs from the run directory and writes one JSON-lines
file plus a small stage report under ``reports/``. ``run_all`` is nothing more
than these runners called in order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

from apf.config import PipelineConfig
from apf.errors import DataError, OutputExists, ProviderError
from apf.formulation import RequirementSet, TestInstance
from apf.llm import HttpChatClient, MockProvider, ProviderConfig, RetryPolicy
from apf.pipeline.records import DatasetRecord, read_jsonl, write_json, write_jsonl
from apf.pipeline.stages import (
    SFT_HYPERPARAMETERS,
    SFT_INSTRUCTION_VERSION,
    Failure,
    annotate_references,
    augment,
    derive_with_sources,
    generate_base,
    report_scores,
    score_records,
    select,
    select_test_instances,
    sft_rows,
)
from apf.ranking import Ranking
from apf.synthbench import synth_pool


INSTANCES = "instances.jsonl"
REQSETS = "reqsets.jsonl"
BASE = "base.jsonl"
AUGMENTED = "augmented.jsonl"
RANKINGS = "rankings.jsonl"
SCORED = "scored.jsonl"
HQ = "hq.jsonl"
TRAIN = "train.jsonl"
SFT = "sft.jsonl"
REPORT = "report.json"
CHUNK = 64


@dataclass
class RunDir:
    root: Path
    force: bool = False

    def __post_init__(self):
        self.root = Path(self.root)

    def path(self, name: str) -> Path:
        return self.root / name

    def output(self, name: str) -> Path:
        """Path for a new output; refuses to clobber unless forced."""
        p = self.path(name)
        if p.exists() and not self.force:
            raise OutputExists(p)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def input(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise DataError(f"missing input {p}; run the producing stage first")
        return p

    def write_report(self, stage: str, payload: dict) -> None:
        write_json(self.output(f"reports/{stage}.json"), payload)


# --- loading -----------------------------------------------------------------


def load_instances(path) -> list[TestInstance]:
    return [TestInstance.from_dict(d) for d in read_jsonl(path)]


@dataclass
class ReqSetRow:
    requirement_set: RequirementSet
    source_id: str
    instance_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "id": self.requirement_set.id,
            "requirement_set": self.requirement_set.to_dict(),
            "source_id": self.source_id,
            "instance_ids": list(self.instance_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReqSetRow":
        return cls(RequirementSet.from_dict(d["requirement_set"]), d["source_id"], tuple(d["instance_ids"]))


def load_reqsets(path) -> list[ReqSetRow]:
    return [ReqSetRow.from_dict(d) for d in read_jsonl(path)]


def load_records(path) -> list[DatasetRecord]:
    return [DatasetRecord.from_dict(d) for d in read_jsonl(path)]


def load_rankings(path) -> dict[str, Ranking]:
    return {d["set_id"]: Ranking.from_dict(d["ranking"]) for d in read_jsonl(path)}


def instances_per_set(rows: Sequence[ReqSetRow], instances: Sequence[TestInstance]) -> dict[str, list[TestInstance]]:
    by_id = {inst.id: inst for inst in instances}
    out = {}
    for row in rows:
        missing = [i for i in row.instance_ids if i not in by_id]
        if missing:
            raise DataError(f"set {row.requirement_set.id}: unknown instance ids {missing[:3]}")
        out[row.requirement_set.id] = [by_id[i] for i in row.instance_ids]
    return out


def make_provider(cfg: PipelineConfig, rows: Sequence[ReqSetRow] = (), instances: Sequence[TestInstance] = ()):
    if cfg.provider == "http":
        return HttpChatClient(
            ProviderConfig(
                endpoint=cfg.endpoint,
                model=cfg.model,
                max_concurrency=cfg.max_concurrency,
                retry=RetryPolicy(max_attempts=cfg.max_attempts),
                timeout=cfg.timeout,
            )
        )
    mode = cfg.provider.removeprefix("mock-")
    provider = MockProvider(mode, cfg.seed, p=cfg.mock_p, kinds=cfg.mock_kinds, k=cfg.mock_k)
    provider.register([row.requirement_set for row in rows], instances)
    return provider


def _chunked(items: Sequence, fn: Callable[[Sequence], Iterable[dict]]) -> Iterator[dict]:
    # Rows are flushed chunk by chunk so an interrupt leaves finished work in .partial.
    for start in range(0, len(items), CHUNK):
        yield from fn(items[start : start + CHUNK])


def _failure_rows(failures: list[Failure]) -> list[dict]:
    return [f.to_dict() for f in sorted(failures, key=lambda f: f.id)]


def _check_provider(stage: str, requested: int, failures: list[Failure]) -> None:
    # Isolated failures are reported; a provider that fails every request is an error.
    if requested and len(failures) == requested and all(f.provider for f in failures):
        first = min(failures, key=lambda f: f.id)
        raise ProviderError(f"{stage}: all {requested} requests failed; first: {first.reason}")


# --- stages --------------------------------------------------------------------


def run_synth(cfg: PipelineConfig, run: RunDir) -> int:
    pool = synth_pool(
        cfg.n_designs, cfg.family_size, cfg.seed, spec=cfg.bands(), n_samples=cfg.n_points, jitter=cfg.jitter, noise_db=cfg.noise_db
    )
    n = write_jsonl(run.output(INSTANCES), (inst.to_dict() for inst in pool))
    run.write_report("synth", {"instances": n})
    return n


def run_derive(cfg: PipelineConfig, run: RunDir) -> int:
    pool = load_instances(run.input(INSTANCES))
    n_sets = cfg.n_sets if cfg.n_sets is not None else cfg.n_designs
    pairs = derive_with_sources(pool, cfg.intent_spec(), cfg.seed, band_spec=cfg.bands(), n_sets=n_sets)
    sets = select_test_instances(
        pairs, pool, cfg.instances_per_set, n_feasible=cfg.n_feasible, candidates=cfg.candidates, tol=cfg.tol
    )
    rows = (ReqSetRow(rs, src.id, tuple(i.id for i in insts)).to_dict() for (rs, src), insts in zip(pairs, sets))
    n = write_jsonl(run.output(REQSETS), rows)
    run.write_report("derive", {"requirement_sets": n})
    return n


def _provider_inputs(cfg: PipelineConfig, run: RunDir, with_instances: bool):
    rows = load_reqsets(run.input(REQSETS))
    instances = load_instances(run.input(INSTANCES)) if with_instances else []
    return rows, instances, make_provider(cfg, rows, instances)


def run_generate(cfg: PipelineConfig, run: RunDir) -> int:
    rows, _, provider = _provider_inputs(cfg, run, with_instances=False)
    failures: list[Failure] = []

    def batch(chunk):
        records, errs = generate_base([r.requirement_set for r in chunk], provider)
        failures.extend(errs)
        return (rec.to_dict() for rec in records)

    n = write_jsonl(run.output(BASE), _chunked(rows, batch))
    run.write_report("generate", {"requested": len(rows), "records": n, "failures": _failure_rows(failures)})
    _check_provider("generate", len(rows), failures)
    return n


def run_annotate(cfg: PipelineConfig, run: RunDir) -> int:
    rows, instances, provider = _provider_inputs(cfg, run, with_instances=True)
    per_set = instances_per_set(rows, instances)
    failures: list[Failure] = []

    def batch(chunk):
        rankings, errs = annotate_references([r.requirement_set for r in chunk], per_set, provider)
        failures.extend(errs)
        return ({"set_id": sid, "ranking": rankings[sid].to_dict()} for sid in sorted(rankings))

    n = write_jsonl(run.output(RANKINGS), _chunked(rows, batch))
    run.write_report("annotate", {"requested": len(rows), "rankings": n, "failures": _failure_rows(failures)})
    _check_provider("annotate", len(rows), failures)
    return n


def run_score(cfg: PipelineConfig, run: RunDir, input_name: str | None = None) -> int:
    input_name = input_name or (AUGMENTED if cfg.augment_first else BASE)
    records = load_records(run.input(input_name))
    rows = load_reqsets(run.input(REQSETS))
    per_set = instances_per_set(rows, load_instances(run.input(INSTANCES)))
    rankings = load_rankings(run.input(RANKINGS))
    scored, failures = score_records(records, rankings, per_set, tol=cfg.tol, empty_band=cfg.empty_band)
    n = write_jsonl(run.output(SCORED), (r.to_dict() for r in sorted(scored, key=lambda r: r.id)))
    run.write_report(
        "score", {"input": input_name, "records": len(records), "scored": n, "failures": _failure_rows(failures)}
    )
    return n


def run_select(cfg: PipelineConfig, run: RunDir, input_name: str | None = None) -> int:
    scored = load_records(run.input(input_name or SCORED))
    retained, report = select(scored, cfg.threshold)
    n = write_jsonl(run.output(HQ), (r.to_dict() for r in retained))
    if cfg.augment_first:
        # Children were already in the scored file; the selection is the training set.
        write_jsonl(run.output(TRAIN), (r.to_dict() for r in retained))
    run.write_report("select", report)
    return n


def _augment_rows(cfg: PipelineConfig, records: Sequence[DatasetRecord], provider, failures: list[Failure]):
    def batch(chunk):
        out = []
        for rec in chunk:
            out.append(rec)
            if rec.augmented:
                continue
            try:
                out.extend(augment(rec, cfg.variants, cfg.samples, provider, cfg.seed))
            except (DataError, ValueError) as exc:
                failures.append(Failure(rec.id, "augment", type(exc).__name__, str(exc)))
        return (r.to_dict() for r in sorted(out, key=lambda r: r.id))

    return _chunked(sorted(records, key=lambda r: r.id), batch)


def run_augment(cfg: PipelineConfig, run: RunDir, input_name: str | None = None) -> int:
    input_name = input_name or (BASE if cfg.augment_first else HQ)
    output_name = AUGMENTED if cfg.augment_first else TRAIN
    records = load_records(run.input(input_name))
    provider = make_provider(cfg)
    failures: list[Failure] = []
    n = write_jsonl(run.output(output_name), _augment_rows(cfg, records, provider, failures))
    run.write_report(
        "augment",
        {"input": input_name, "output": output_name, "records": len(records), "rows": n, "failures": _failure_rows(failures)},
    )
    return n


def run_export(cfg: PipelineConfig, run: RunDir, input_name: str = TRAIN) -> int:
    records = load_records(run.input(input_name))
    n = write_jsonl(run.output(SFT), sft_rows(records))
    run.write_report("export", {"input": input_name, "rows": n, "instruction_version": SFT_INSTRUCTION_VERSION})
    return n


def build_report(cfg: PipelineConfig, run: RunDir) -> dict:
    stages = {}
    reports_dir = run.path("reports")
    if reports_dir.is_dir():
        for p in sorted(reports_dir.glob("*.json")):
            stages[p.stem] = json.loads(p.read_text(encoding="utf-8"))
    hist = report_scores(load_records(run.input(SCORED))) if run.path(SCORED).exists() else report_scores([])
    failures = [f for s in stages.values() for f in s.get("failures", [])]
    return {
        "config": cfg.to_dict(),
        "counts": {
            name: {k: v for k, v in body.items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
            for name, body in stages.items()
        },
        "retention_rate": stages.get("select", {}).get("retention_rate"),
        "failures": failures,
        "histogram": hist.rows(),
        "histogram_text": hist.render_text(),
        "sft": {"instruction_version": SFT_INSTRUCTION_VERSION, "hyperparameters": SFT_HYPERPARAMETERS},
    }


def run_report(cfg: PipelineConfig, run: RunDir) -> dict:
    report = build_report(cfg, run)
    write_json(run.output(REPORT), report)
    return report


def run_all(cfg: PipelineConfig, run: RunDir) -> dict:
    run_synth(cfg, run)
    run_derive(cfg, run)
    run_generate(cfg, run)
    run_annotate(cfg, run)
    if cfg.augment_first:
        run_augment(cfg, run)
        run_score(cfg, run)
        run_select(cfg, run)
    else:
        run_score(cfg, run)
        run_select(cfg, run)
        run_augment(cfg, run)
    run_export(cfg, run)
    return run_report(cfg, run)


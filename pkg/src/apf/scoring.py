"""Rank-correlation quality score and the alignment metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from apf.errors import (
    AlphaOutOfRange,
    DegenerateRanking,
    IdMismatch,
    LengthMismatch,
    NoConstraints,
    NoObjectives,
)
from apf.formulation import Formulation, TestInstance, evaluate_item
from apf.ranking import Ranking, fractional_ranks, induced_ranking


def rank_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of two rank vectors (tie-corrected Spearman)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise LengthMismatch(f"rank vectors have lengths {x.size} and {y.size}")
    if x.size < 2:
        raise DegenerateRanking("need at least two ranked instances")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateRanking("constant ranking has no rank correlation")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, rho))


def spearman(a: Ranking, b: Ranking) -> float:
    """Spearman correlation between two rankings of the same instances."""
    if set(a.instance_ids) != set(b.instance_ids) or len(a) != len(b):
        missing = sorted(set(a.instance_ids) - set(b.instance_ids))
        extra = sorted(set(b.instance_ids) - set(a.instance_ids))
        raise IdMismatch(f"rankings cover different instances: only in first={missing}, only in second={extra}")
    return rank_correlation(np.asarray(a.ranks), b.aligned(a.instance_ids))


@dataclass(frozen=True)
class QualityScore:
    value: float
    formulation_id: str
    reference_ranking_id: str

    def __post_init__(self):
        if not (-1.0 <= self.value <= 1.0):
            raise ValueError(f"quality score {self.value} outside [-1, 1]")


def quality_score(f: Formulation, insts: Sequence[TestInstance], reference: Ranking, **rank_kw) -> QualityScore:
    ids = [inst.id for inst in insts]
    if len(reference) != len(ids) or set(reference.instance_ids) != set(ids):
        missing = sorted(set(ids) - set(reference.instance_ids))
        extra = sorted(set(reference.instance_ids) - set(ids))
        raise IdMismatch(f"reference ranking does not cover the instances: missing={missing} extra={extra}")
    predicted = induced_ranking(f, insts, **rank_kw)
    return QualityScore(spearman(predicted, reference), f.id, reference.id)


def objective_correlations(f: Formulation, insts: Sequence[TestInstance], ground_truth: Ranking, **eval_kw) -> list[float]:
    if f.n1 == 0:
        raise NoObjectives(f"formulation {f.id!r} has no objectives")
    ids = [inst.id for inst in insts]
    target = ground_truth.aligned(ids)
    out = []
    for obj in f.objectives:
        values = [evaluate_item(obj, inst, **eval_kw) for inst in insts]
        out.append(rank_correlation(fractional_ranks(values), target))
    return out


def alignment_obj(f: Formulation, insts: Sequence[TestInstance], ground_truth: Ranking, **eval_kw) -> float:
    """Mean rank correlation between each objective's own ordering and the ground truth."""
    rhos = objective_correlations(f, insts, ground_truth, **eval_kw)
    return float(sum(rhos) / len(rhos))


def predicted_feasibility(f: Formulation, insts: Sequence[TestInstance], *, tol: float = 0.0, **eval_kw) -> list[list[int]]:
    """One 0/1 vector per constraint: 1 where that constraint alone is satisfied."""
    return [[int(evaluate_item(c, inst, **eval_kw) < tol) for inst in insts] for c in f.constraints]


def constraint_accuracies(
    f: Formulation, insts: Sequence[TestInstance], ground_truth_feasibility: Sequence[int], **kw
) -> list[float]:
    if f.n2 == 0:
        raise NoConstraints(f"formulation {f.id!r} has no constraints")
    y = np.asarray(ground_truth_feasibility, dtype=int)
    if y.size != len(insts):
        raise LengthMismatch(f"{y.size} feasibility labels for {len(insts)} instances")
    m = len(insts)
    return [1.0 - float(np.abs(np.asarray(yhat) - y).sum()) / m for yhat in predicted_feasibility(f, insts, **kw)]


def alignment_con(f: Formulation, insts: Sequence[TestInstance], ground_truth_feasibility: Sequence[int], **kw) -> float:
    """Mean per-constraint feasibility-classification accuracy."""
    acc = constraint_accuracies(f, insts, ground_truth_feasibility, **kw)
    return float(sum(acc) / len(acc))


@dataclass(frozen=True)
class AlignmentReport:
    a_obj: float
    a_con: float
    a_total: float
    alpha: float
    per_item: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "a_obj": self.a_obj,
            "a_con": self.a_con,
            "a_total": self.a_total,
            "alpha": self.alpha,
            "per_item": dict(self.per_item),
        }


def alignment_total(a_obj: float, a_con: float, alpha: float = 0.5, per_item: dict | None = None) -> AlignmentReport:
    if not (0.0 <= alpha <= 1.0):
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    total = alpha * a_obj + (1.0 - alpha) * a_con
    return AlignmentReport(a_obj, a_con, total, alpha, per_item or {})


def alignment_report(
    f: Formulation,
    insts: Sequence[TestInstance],
    ground_truth: Ranking,
    ground_truth_feasibility: Sequence[int],
    alpha: float = 0.5,
    *,
    tol: float = 0.0,
    empty_band="error",
) -> AlignmentReport:
    rhos = objective_correlations(f, insts, ground_truth, empty_band=empty_band)
    accs = constraint_accuracies(f, insts, ground_truth_feasibility, tol=tol, empty_band=empty_band)
    per_item = {obj.name: rho for obj, rho in zip(f.objectives, rhos)}
    per_item.update({c.name: acc for c, acc in zip(f.constraints, accs)})
    return alignment_total(sum(rhos) / len(rhos), sum(accs) / len(accs), alpha, per_item)

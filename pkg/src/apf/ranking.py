"""Formulation-induced rankings over a set of test instances.

Instances are ordered feasible-first. Feasible instances are grouped into
Pareto fronts on the objective values (all minimised); every instance in a
front shares one fractional rank. Infeasible instances follow, ordered by
ascending total constraint violation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from apf.errors import EvaluationError, IdMismatch, InvariantError
from apf.formulation import Formulation, TestInstance, evaluate_item, feasibility


@dataclass(frozen=True)
class Ranking:
    """Fractional ranks (1 = best) over named instances."""

    instance_ids: tuple[str, ...]
    ranks: tuple[float, ...]
    id: str = ""

    def __post_init__(self):
        ids = tuple(self.instance_ids)
        ranks = tuple(float(r) for r in self.ranks)
        object.__setattr__(self, "instance_ids", ids)
        object.__setattr__(self, "ranks", ranks)
        if len(ids) != len(ranks):
            raise InvariantError("ranking needs one rank per instance")
        if len(set(ids)) != len(ids):
            raise IdMismatch("ranking repeats instance ids")
        n = len(ids)
        if abs(sum(ranks) - n * (n + 1) / 2) > 1e-9 * max(1, n * n):
            raise InvariantError(f"ranks must sum to n(n+1)/2 = {n * (n + 1) / 2}, got {sum(ranks)}")

    def __len__(self) -> int:
        return len(self.instance_ids)

    @property
    def tie_groups(self) -> list[frozenset[str]]:
        groups: dict[float, set[str]] = {}
        for i, r in zip(self.instance_ids, self.ranks):
            groups.setdefault(r, set()).add(i)
        return [frozenset(groups[r]) for r in sorted(groups) if len(groups[r]) > 1]

    def rank_of(self, instance_id: str) -> float:
        return self.ranks[self.instance_ids.index(instance_id)]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.instance_ids, self.ranks))

    def aligned(self, ids: Sequence[str]) -> np.ndarray:
        """Rank vector in the order of ``ids`` (which must be the same id set)."""
        lookup = self.as_dict()
        if len(ids) != len(lookup) or set(ids) != set(lookup):
            missing = sorted(set(ids) - set(lookup))
            extra = sorted(set(lookup) - set(ids))
            raise IdMismatch(f"instance ids differ: missing={missing} extra={extra}")
        return np.array([lookup[i] for i in ids], dtype=float)

    def order(self) -> list[str]:
        """Ids best-first; ties keep their listed order."""
        idx = sorted(range(len(self.ranks)), key=lambda k: (self.ranks[k], k))
        return [self.instance_ids[k] for k in idx]

    @classmethod
    def from_order(cls, order: Sequence[str], id: str = "") -> "Ranking":
        return cls(tuple(order), tuple(float(k) for k in range(1, len(order) + 1)), id)

    @classmethod
    def from_keys(cls, ids: Sequence[str], keys: Sequence[Hashable], id: str = "") -> "Ranking":
        return cls(tuple(ids), tuple(fractional_ranks(keys)), id)

    def to_dict(self) -> dict:
        return {"id": self.id, "instance_ids": list(self.instance_ids), "ranks": list(self.ranks)}

    @classmethod
    def from_dict(cls, d: dict) -> "Ranking":
        return cls(tuple(d["instance_ids"]), tuple(d["ranks"]), d.get("id", ""))


@dataclass(frozen=True)
class FrontAssignment:
    front_index: tuple[int, ...]

    @property
    def fronts(self) -> list[list[int]]:
        if not self.front_index:
            return []
        out: list[list[int]] = [[] for _ in range(max(self.front_index) + 1)]
        for i, k in enumerate(self.front_index):
            out[k].append(i)
        return out


def fractional_ranks(keys: Sequence) -> list[float]:
    """Average-of-positions ranks for sortable keys (smaller key = better)."""
    order = sorted(range(len(keys)), key=lambda i: keys[i])
    ranks = [0.0] * len(keys)
    start = 0
    while start < len(order):
        stop = start
        while stop + 1 < len(order) and keys[order[stop + 1]] == keys[order[start]]:
            stop += 1
        avg = (start + stop) / 2 + 1
        for pos in range(start, stop + 1):
            ranks[order[pos]] = avg
        start = stop + 1
    return ranks


def objective_matrix(f: Formulation, insts: Sequence[TestInstance], **eval_kw) -> np.ndarray:
    """``|insts| x n1`` matrix of objective values."""
    objectives = f.objectives
    m = np.empty((len(insts), len(objectives)), dtype=float)
    for i, inst in enumerate(insts):
        for j, obj in enumerate(objectives):
            try:
                m[i, j] = evaluate_item(obj, inst, **eval_kw)
            except EvaluationError as exc:
                raise exc.with_instance(inst.id) from None
    return m


def non_dominated_fronts(m: np.ndarray) -> FrontAssignment:
    """Fast non-dominated sort (minimisation) of the rows of ``m``.

    Row ``a`` dominates row ``b`` iff ``a <= b`` everywhere and ``a < b``
    somewhere; identical rows never dominate each other.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if n == 0:
        return FrontAssignment(())
    if m.ndim != 2:
        raise ValueError("objective matrix must be 2-D")
    le = np.all(m[:, None, :] <= m[None, :, :], axis=2)
    lt = np.any(m[:, None, :] < m[None, :, :], axis=2)
    dominates = le & lt  # dominates[p, q]: p dominates q

    dominated_count = dominates.sum(axis=0)
    front = np.full(n, -1, dtype=int)
    current = list(np.flatnonzero(dominated_count == 0))
    k = 0
    while current:
        nxt = []
        for p in current:
            front[p] = k
            for q in np.flatnonzero(dominates[p]):
                dominated_count[q] -= 1
                if dominated_count[q] == 0:
                    nxt.append(q)
        current = nxt
        k += 1
    return FrontAssignment(tuple(int(x) for x in front))


def ranking_keys(f: Formulation, insts: Sequence[TestInstance], *, tol: float = 0.0, empty_band="error") -> list[tuple]:
    """Sort keys: ``(0, front)`` for feasible, ``(1, violation)`` for infeasible."""
    status = []
    for inst in insts:
        try:
            status.append(feasibility(f, inst, tol=tol, empty_band=empty_band))
        except EvaluationError as exc:
            raise exc.with_instance(inst.id) from None
    feasible_idx = [i for i, (ok, _) in enumerate(status) if ok]
    m = objective_matrix(f, [insts[i] for i in feasible_idx], empty_band=empty_band)
    fronts = non_dominated_fronts(m).front_index
    keys: list[tuple] = [(1, violation) for _, violation in status]
    for pos, i in enumerate(feasible_idx):
        keys[i] = (0, fronts[pos])
    return keys


def induced_ranking(
    f: Formulation,
    insts: Sequence[TestInstance],
    *,
    tol: float = 0.0,
    empty_band="error",
    id: str = "",
) -> Ranking:
    """Ranking of ``insts`` implied by evaluating ``f`` on each of them."""
    keys = ranking_keys(f, insts, tol=tol, empty_band=empty_band)
    return Ranking.from_keys([inst.id for inst in insts], keys, id=id or f.id)

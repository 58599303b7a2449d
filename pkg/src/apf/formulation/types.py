"""Domain types: bands, requirements, test instances and the formulation IR.

Everything here is an immutable value object. Reals that end up in the IR
(band edges, constants) are normalised to six significant digits on
construction so that the canonical text form is lossless.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Iterator, Union

import numpy as np

from apf.errors import InvariantError

MAX_EXPR_DEPTH = 8
_METRIC_RE = re.compile(r"[a-z][a-z0-9_]*\Z")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def canonical_real(value: float) -> float:
    """Round to six significant digits; ``-0.0`` becomes ``0.0``."""
    value = float(value)
    if not math.isfinite(value):
        raise InvariantError(f"non-finite real {value!r}")
    out = float(format(value, ".6g"))
    return 0.0 if out == 0 else out


def format_real(value: float) -> str:
    text = format(float(value), ".6g")
    return "0" if text == "-0" else text


class Aggregator(str, Enum):
    MIN = "min"
    MAX = "max"
    MEAN = "mean"


class Comparator(str, Enum):
    GE = ">="
    LE = "<="


class Direction(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class ItemKind(str, Enum):
    OBJECTIVE = "objective"
    CONSTRAINT = "constraint"


@dataclass(frozen=True)
class Band:
    """Closed interval ``[lo, hi]`` of the evaluation variable."""

    lo: float
    hi: float

    def __post_init__(self):
        lo, hi = canonical_real(self.lo), canonical_real(self.hi)
        if not lo < hi:
            raise InvariantError(f"band requires lo < hi, got [{format_real(lo)}, {format_real(hi)}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def shifted(self, delta: float) -> "Band":
        return Band(self.lo + delta, self.hi + delta)


@dataclass(frozen=True)
class MetricId:
    name: str
    units: str = field(default="", compare=False)

    def __post_init__(self):
        if not _METRIC_RE.match(self.name or ""):
            raise InvariantError(f"invalid metric name {self.name!r}")


@dataclass(frozen=True)
class Threshold:
    comparator: Comparator
    value: float
    aggregator: Aggregator

    def __post_init__(self):
        object.__setattr__(self, "comparator", Comparator(self.comparator))
        object.__setattr__(self, "aggregator", Aggregator(self.aggregator))
        object.__setattr__(self, "value", canonical_real(self.value))


@dataclass(frozen=True)
class Optimize:
    direction: Direction
    aggregator: Aggregator

    def __post_init__(self):
        object.__setattr__(self, "direction", Direction(self.direction))
        object.__setattr__(self, "aggregator", Aggregator(self.aggregator))


DesignIntent = Union[Threshold, Optimize]


@dataclass(frozen=True)
class Requirement:
    band: Band
    metric: MetricId
    intent: DesignIntent
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvariantError("requirement text must be nonempty")
        if not isinstance(self.intent, (Threshold, Optimize)):
            raise InvariantError(f"unknown intent {self.intent!r}")

    @property
    def is_objective(self) -> bool:
        return isinstance(self.intent, Optimize)

    def with_text(self, text: str) -> "Requirement":
        return Requirement(self.band, self.metric, self.intent, text)

    def to_dict(self) -> dict:
        intent = self.intent
        if isinstance(intent, Threshold):
            idict = {
                "type": "threshold",
                "comparator": intent.comparator.value,
                "value": intent.value,
                "aggregator": intent.aggregator.value,
            }
        else:
            idict = {
                "type": "optimize",
                "direction": intent.direction.value,
                "aggregator": intent.aggregator.value,
            }
        return {
            "band": [self.band.lo, self.band.hi],
            "metric": {"name": self.metric.name, "units": self.metric.units},
            "intent": idict,
            "text": self.text,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Requirement":
        i = d["intent"]
        if i["type"] == "threshold":
            intent: DesignIntent = Threshold(i["comparator"], i["value"], i["aggregator"])
        elif i["type"] == "optimize":
            intent = Optimize(i["direction"], i["aggregator"])
        else:
            raise InvariantError(f"unknown intent type {i['type']!r}")
        m = d["metric"]
        return cls(Band(*d["band"]), MetricId(m["name"], m.get("units", "")), intent, d["text"])


@dataclass(frozen=True)
class RequirementSet:
    id: str
    requirements: tuple[Requirement, ...]

    def __post_init__(self):
        object.__setattr__(self, "requirements", tuple(self.requirements))
        if not self.requirements:
            raise InvariantError(f"requirement set {self.id!r} is empty")

    def __len__(self) -> int:
        return len(self.requirements)

    def __iter__(self) -> Iterator[Requirement]:
        return iter(self.requirements)

    def to_dict(self) -> dict:
        return {"id": self.id, "requirements": [r.to_dict() for r in self.requirements]}

    @classmethod
    def from_dict(cls, d: dict) -> "RequirementSet":
        return cls(d["id"], tuple(Requirement.from_dict(r) for r in d["requirements"]))


@dataclass(frozen=True)
class TestInstance:
    """A sampled performance curve ``(z, value)`` for one design.

    The constructor checks the evaluation grid (sorted, finite, at least two
    points). Curve values are only checked for finiteness by :meth:`from_dict`
    and :meth:`validate`, so that evaluation can still be exercised on
    corrupted curves.
    """

    __test__ = False  # keep pytest from collecting this class

    id: str
    samples: tuple[tuple[float, float], ...]
    design_params: tuple[float, ...] = ()

    def __post_init__(self):
        samples = tuple((float(z), float(v)) for z, v in self.samples)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "design_params", tuple(float(x) for x in self.design_params))
        if len(samples) < 2:
            raise InvariantError(f"instance {self.id!r} needs at least 2 samples")
        z = self.z
        if not np.all(np.isfinite(z)):
            raise InvariantError(f"instance {self.id!r} has non-finite z")
        if np.any(np.diff(z) <= 0):
            raise InvariantError(f"instance {self.id!r} samples must be strictly ascending in z")

    @cached_property
    def z(self) -> np.ndarray:
        arr = np.array([s[0] for s in self.samples], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def values(self) -> np.ndarray:
        arr = np.array([s[1] for s in self.samples], dtype=float)
        arr.flags.writeable = False
        return arr

    def validate(self) -> "TestInstance":
        if not np.all(np.isfinite(self.values)):
            raise InvariantError(f"instance {self.id!r} has non-finite values")
        return self

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "design_params": list(self.design_params),
            "samples": [[z, v] for z, v in self.samples],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestInstance":
        return cls(d["id"], tuple(map(tuple, d["samples"])), tuple(d.get("design_params", ()))).validate()

    @classmethod
    def from_arrays(cls, id: str, z, values, design_params=()) -> "TestInstance":
        return cls(id, tuple(zip(np.asarray(z, float).tolist(), np.asarray(values, float).tolist())), tuple(design_params))


# --- formulation IR -------------------------------------------------------


@dataclass(frozen=True)
class Agg:
    op: Aggregator
    metric: str
    band: Band

    def __post_init__(self):
        object.__setattr__(self, "op", Aggregator(self.op))
        if not _METRIC_RE.match(self.metric or ""):
            raise InvariantError(f"invalid metric name {self.metric!r}")


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Const:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", canonical_real(self.value))


Expr = Union[Agg, Neg, Sub, Const]


def expr_depth(expr: Expr) -> int:
    if isinstance(expr, (Agg, Const)):
        return 1
    if isinstance(expr, Neg):
        return 1 + expr_depth(expr.child)
    if isinstance(expr, Sub):
        return 1 + max(expr_depth(expr.left), expr_depth(expr.right))
    raise InvariantError(f"not an IR node: {expr!r}")


def iter_aggs(expr: Expr) -> Iterator[Agg]:
    if isinstance(expr, Agg):
        yield expr
    elif isinstance(expr, Neg):
        yield from iter_aggs(expr.child)
    elif isinstance(expr, Sub):
        yield from iter_aggs(expr.left)
        yield from iter_aggs(expr.right)


@dataclass(frozen=True)
class FormulationItem:
    """One objective (minimised) or constraint (satisfied iff residual < 0)."""

    kind: ItemKind
    name: str
    expr: Expr

    def __post_init__(self):
        object.__setattr__(self, "kind", ItemKind(self.kind))
        if not _NAME_RE.match(self.name or ""):
            raise InvariantError(f"invalid item name {self.name!r}")
        depth = expr_depth(self.expr)
        if depth > MAX_EXPR_DEPTH:
            raise InvariantError(f"item {self.name!r}: expression depth {depth} exceeds {MAX_EXPR_DEPTH}")
        if next(iter_aggs(self.expr), None) is None:
            raise InvariantError(f"item {self.name!r} does not aggregate any metric")

    @property
    def is_objective(self) -> bool:
        return self.kind is ItemKind.OBJECTIVE


@dataclass(frozen=True)
class Formulation:
    id: str
    items: tuple[FormulationItem, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise InvariantError(f"formulation {self.id!r} has no items")
        names = [it.name for it in self.items]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise InvariantError(f"formulation {self.id!r} repeats item names {dupes}")

    @property
    def objectives(self) -> tuple[FormulationItem, ...]:
        return tuple(it for it in self.items if it.kind is ItemKind.OBJECTIVE)

    @property
    def constraints(self) -> tuple[FormulationItem, ...]:
        return tuple(it for it in self.items if it.kind is ItemKind.CONSTRAINT)

    @property
    def n1(self) -> int:
        return len(self.objectives)

    @property
    def n2(self) -> int:
        return len(self.constraints)

    def with_id(self, id: str) -> "Formulation":
        return Formulation(id, self.items)

    def permuted(self, permutation) -> "Formulation":
        """Item ``j`` of the result is item ``permutation[j]`` of this one."""
        return Formulation(self.id, tuple(self.items[p] for p in permutation))


def default_item_name(kind: ItemKind, ordinal: int) -> str:
    """Name given to the ``ordinal``-th (1-based) item of ``kind``."""
    return f"obj{ordinal}" if kind is ItemKind.OBJECTIVE else f"c{ordinal}"


def item_for_requirement(req: Requirement, name: str) -> FormulationItem:
    """Compile one requirement into its ground-truth IR item."""
    agg = Agg(req.intent.aggregator, req.metric.name, req.band)
    intent = req.intent
    if isinstance(intent, Optimize):
        expr: Expr = Neg(agg) if intent.direction is Direction.MAXIMIZE else agg
        return FormulationItem(ItemKind.OBJECTIVE, name, expr)
    if intent.comparator is Comparator.GE:
        expr = Sub(Const(intent.value), agg)
    else:
        expr = Sub(agg, Const(intent.value))
    return FormulationItem(ItemKind.CONSTRAINT, name, expr)


def formulation_from_requirements(reqs: RequirementSet, id: str | None = None) -> Formulation:
    counts = {ItemKind.OBJECTIVE: 0, ItemKind.CONSTRAINT: 0}
    items = []
    for req in reqs:
        kind = ItemKind.OBJECTIVE if req.is_objective else ItemKind.CONSTRAINT
        counts[kind] += 1
        items.append(item_for_requirement(req, default_item_name(kind, counts[kind])))
    return Formulation(id if id is not None else reqs.id, tuple(items))

"""Desk-scale stand-in for an antenna simulator.

Curves are five-band radiation-efficiency responses (dB vs. frequency):
a low stopband, a low radiation null, a passband plateau, a high radiation
null and a high stopband. Plateaus are blended with logistic transitions
centred on the null bands, the nulls are Gaussian dips, and the passband
carries an optional sinusoidal ripple.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from apf.errors import InvariantError, NoEligibleItem
from apf.formulation import (
    Agg,
    Aggregator,
    Band,
    Comparator,
    Const,
    Direction,
    Expr,
    Formulation,
    FormulationItem,
    ItemKind,
    MetricId,
    Neg,
    Optimize,
    Requirement,
    RequirementSet,
    Sub,
    TestInstance,
    Threshold,
    evaluate_expr,
    format_real,
    formulation_from_requirements,
)
from apf.formulation.types import MAX_EXPR_DEPTH, expr_depth, iter_aggs
from apf.ranking import Ranking, induced_ranking

BAND_NAMES = ("low_stopband", "low_null", "passband", "high_null", "high_stopband")
BAND_LABELS = {
    "low_stopband": "low stopband",
    "low_null": "low radiation null",
    "passband": "passband",
    "high_null": "high radiation null",
    "high_stopband": "high stopband",
}
DEFAULT_METRIC = MetricId("radiation_efficiency", "dB")
DB_FLOOR = -60.0
N_DESIGN_PARAMS = 8


@dataclass(frozen=True)
class BandSpec:
    """Five ordered frequency bands plus the sampling domain.

    Only the passband, low stopband and high null edges come from the
    reference task; the low null and high stopband edges are local choices.
    """

    low_stopband: Band = Band(0.80, 0.92)
    low_null: Band = Band(0.92, 0.95)
    passband: Band = Band(0.95, 1.08)
    high_null: Band = Band(1.08, 1.12)
    high_stopband: Band = Band(1.12, 1.20)
    z_min: float = 0.75
    z_max: float = 1.25
    z_units: str = "GHz"

    def __post_init__(self):
        bands = self.bands()
        for (a_name, a), (b_name, b) in zip(bands, bands[1:]):
            if a.hi > b.lo:
                raise InvariantError(f"bands {a_name} and {b_name} overlap")
        if not (self.z_min <= bands[0][1].lo and bands[-1][1].hi <= self.z_max):
            raise InvariantError("bands must lie inside the sampling domain")

    def bands(self) -> list[tuple[str, Band]]:
        return [(name, getattr(self, name)) for name in BAND_NAMES]

    def __getitem__(self, name: str) -> Band:
        if name not in BAND_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        d = {name: [b.lo, b.hi] for name, b in self.bands()}
        d.update(z_min=self.z_min, z_max=self.z_max, z_units=self.z_units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BandSpec":
        kw = {name: Band(*d[name]) for name in BAND_NAMES if name in d}
        for key in ("z_min", "z_max", "z_units"):
            if key in d:
                kw[key] = d[key]
        return cls(**kw)


def design_params(x: Sequence[float], d: int = N_DESIGN_PARAMS) -> np.ndarray:
    """Clamp ``x`` to ``[0, 1]^d``; missing trailing entries take neutral defaults."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    if x.size < 5:
        raise InvariantError("design vector needs at least 5 entries")
    defaults = np.array([0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.5, 0.0])
    out = defaults.copy()
    out[: min(x.size, d)] = x[:d]
    return out


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def curve_levels(x: Sequence[float]) -> dict[str, float]:
    """Physical curve parameters for a design vector.

    x[0] passband level, x[1]/x[2] low/high stopband levels, x[3]/x[4] null
    depths below the local level, x[5] ripple amplitude, x[6] transition
    width, x[7] ripple phase.
    """
    x = design_params(x)
    return {
        "passband": -6.0 + 5.0 * x[0],
        "low_stopband": -20.0 + 14.0 * x[1],
        "high_stopband": -20.0 + 14.0 * x[2],
        "low_null_depth": 4.0 + 26.0 * x[3],
        "high_null_depth": 4.0 + 26.0 * x[4],
        "ripple": 0.8 * x[5],
        "width": 0.0015 + 0.004 * x[6],
        "phase": 2.0 * math.pi * x[7],
    }


def sample_grid(spec: BandSpec, n_samples: int) -> np.ndarray:
    return np.round(np.linspace(spec.z_min, spec.z_max, n_samples), 10)


def render_curve(
    x: Sequence[float],
    spec: BandSpec | None = None,
    n_samples: int = 201,
    seed: int = 0,
    *,
    id: str | None = None,
    noise_db: float = 0.0,
) -> TestInstance:
    """Render the design ``x`` into a :class:`TestInstance`.

    Deterministic in ``(x, spec, n_samples, seed)``; ``seed`` only drives
    the optional measurement noise.
    """
    if n_samples < 50:
        raise InvariantError("n_samples must be at least 50")
    spec = spec or BandSpec()
    p = curve_levels(x)
    z = sample_grid(spec, n_samples)
    c_low = 0.5 * (spec.low_null.lo + spec.low_null.hi)
    c_high = 0.5 * (spec.high_null.lo + spec.high_null.hi)
    w = p["width"]
    up = _sigmoid((z - c_low) / w)
    down = _sigmoid((z - c_high) / w)
    level = p["low_stopband"] + (p["passband"] - p["low_stopband"]) * up + (p["high_stopband"] - p["passband"]) * down
    omega_low = spec.low_null.width / 4.0
    omega_high = spec.high_null.width / 4.0
    dips = p["low_null_depth"] * np.exp(-(((z - c_low) / omega_low) ** 2)) + p["high_null_depth"] * np.exp(
        -(((z - c_high) / omega_high) ** 2)
    )
    pb = spec.passband
    ripple = p["ripple"] * np.sin(2.0 * math.pi * 3.0 * (z - pb.lo) / pb.width + p["phase"]) * up * (1.0 - down)
    values = level - dips + ripple
    if noise_db > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise_db, size=z.size)
    values = np.clip(values, DB_FLOOR + 0.1, -0.05)
    params = design_params(x)
    return TestInstance.from_arrays(id or f"x{seed}", z, values, params.tolist())


def synth_pool(
    n_designs: int,
    family_size: int = 10,
    seed: int = 0,
    *,
    spec: BandSpec | None = None,
    n_samples: int = 201,
    jitter: float = 0.25,
    noise_db: float = 0.0,
) -> list[TestInstance]:
    """Families of related designs: one random base plus jittered siblings.

    Siblings give each derived requirement set neighbours that straddle its
    thresholds, which is what makes rankings informative.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_designs):
        base = rng.uniform(0.0, 1.0, N_DESIGN_PARAMS)
        for j in range(family_size):
            x = base if j == 0 else np.clip(base + rng.normal(0.0, jitter, N_DESIGN_PARAMS), 0.0, 1.0)
            out.append(render_curve(x, spec, n_samples, seed=i * family_size + j, id=f"d{i:05d}-{j:02d}", noise_db=noise_db))
    return out


# --- requirement extraction ------------------------------------------------


@dataclass(frozen=True)
class IntentTemplate:
    """How one band becomes one requirement.

    ``offset`` is a ``(lo, hi)`` range of dB by which the realised aggregate
    is loosened before it becomes a threshold. Ignored for objectives.
    """

    band: str
    aggregator: Aggregator
    comparator: Comparator | None = None
    direction: Direction | None = None
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.band not in BAND_NAMES:
            raise InvariantError(f"unknown band {self.band!r}")
        if (self.comparator is None) == (self.direction is None):
            raise InvariantError("template needs exactly one of comparator / direction")
        object.__setattr__(self, "aggregator", Aggregator(self.aggregator))
        if self.comparator is not None:
            object.__setattr__(self, "comparator", Comparator(self.comparator))
        if self.direction is not None:
            object.__setattr__(self, "direction", Direction(self.direction))
        lo, hi = self.offset
        if lo < 0 or hi < lo:
            raise InvariantError("offset range must satisfy 0 <= lo <= hi")

    def to_dict(self) -> dict:
        return {
            "band": self.band,
            "aggregator": self.aggregator.value,
            "comparator": self.comparator.value if self.comparator else None,
            "direction": self.direction.value if self.direction else None,
            "offset": list(self.offset),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntentTemplate":
        return cls(d["band"], d["aggregator"], d.get("comparator"), d.get("direction"), tuple(d.get("offset", (0.0, 0.0))))


@dataclass(frozen=True)
class IntentSpec:
    templates: tuple[IntentTemplate, ...]
    decimals: int = 2
    metric: MetricId = DEFAULT_METRIC

    def with_offsets(self, offset: tuple[float, float]) -> "IntentSpec":
        return replace(self, templates=tuple(replace(t, offset=tuple(offset)) for t in self.templates))

    def to_dict(self) -> dict:
        return {
            "templates": [t.to_dict() for t in self.templates],
            "decimals": self.decimals,
            "metric": {"name": self.metric.name, "units": self.metric.units},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntentSpec":
        m = d.get("metric", {"name": DEFAULT_METRIC.name, "units": DEFAULT_METRIC.units})
        return cls(
            tuple(IntentTemplate.from_dict(t) for t in d["templates"]),
            int(d.get("decimals", 2)),
            MetricId(m["name"], m.get("units", "")),
        )


def _objective(band):
    return IntentTemplate(band, Aggregator.MEAN, direction=Direction.MAXIMIZE)


def _threshold(band, agg, cmp, offset=(0.0, 0.0)):
    return IntentTemplate(band, agg, comparator=cmp, offset=offset)


# Passband objective plus the three constraints of the reference antenna task.
LISTING_TASK_INTENTS = IntentSpec(
    (
        _objective("passband"),
        _threshold("passband", Aggregator.MIN, Comparator.GE),
        _threshold("low_stopband", Aggregator.MAX, Comparator.LE),
        _threshold("high_null", Aggregator.MIN, Comparator.LE),
    )
)

DEFAULT_OFFSET = (0.0, 1.0)

DEFAULT_INTENTS = IntentSpec(
    (
        _objective("passband"),
        _threshold("passband", Aggregator.MIN, Comparator.GE, DEFAULT_OFFSET),
        _threshold("low_stopband", Aggregator.MAX, Comparator.LE, DEFAULT_OFFSET),
        _threshold("high_null", Aggregator.MIN, Comparator.LE, DEFAULT_OFFSET),
    )
)

# Every band constrained; rankings are less sensitive to single-item errors.
FULL_INTENTS = IntentSpec(
    (
        _objective("passband"),
        _threshold("passband", Aggregator.MIN, Comparator.GE, DEFAULT_OFFSET),
        _threshold("low_stopband", Aggregator.MAX, Comparator.LE, DEFAULT_OFFSET),
        _threshold("low_null", Aggregator.MIN, Comparator.LE, DEFAULT_OFFSET),
        _threshold("high_null", Aggregator.MIN, Comparator.LE, DEFAULT_OFFSET),
        _threshold("high_stopband", Aggregator.MAX, Comparator.LE, DEFAULT_OFFSET),
    )
)

_AGG_WORDS = {Aggregator.MIN: "minimum", Aggregator.MAX: "maximum", Aggregator.MEAN: "average"}
_CMP_WORDS = {Comparator.GE: "greater than", Comparator.LE: "less than"}


def requirement_text(band_name: str, band: Band, metric: MetricId, intent, z_units: str = "GHz") -> str:
    label = BAND_LABELS.get(band_name, band_name.replace("_", " "))
    span = f"{format_real(band.lo)}-{format_real(band.hi)} {z_units}"
    what = f"{_AGG_WORDS[intent.aggregator]} {metric.name.replace('_', ' ')} in the {label} ({span})"
    if isinstance(intent, Optimize):
        return f"{intent.direction.value.capitalize()} the {what}."
    units = f" {metric.units}" if metric.units else ""
    return f"The {what} must be {_CMP_WORDS[intent.comparator]} {format_real(intent.value)}{units}."


def outward_threshold(realized: float, offset: float, comparator: Comparator, decimals: int) -> float:
    """Loosen ``realized`` by ``offset`` and round away from it, strictly.

    The result always leaves the source curve strictly feasible, since
    constraints only hold for residuals ``< 0``.
    """
    scale = 10 ** decimals
    step = 1.0 / scale
    if comparator is Comparator.GE:
        t = math.floor(round((realized - offset) * scale, 6)) / scale
        while t >= realized:
            t = round(t - step, decimals)
    else:
        t = math.ceil(round((realized + offset) * scale, 6)) / scale
        while t <= realized:
            t = round(t + step, decimals)
    return t


def extract_requirements(
    source: TestInstance,
    spec: BandSpec | None = None,
    intent_spec: IntentSpec = DEFAULT_INTENTS,
    seed: int | str = 0,
    *,
    id: str | None = None,
) -> RequirementSet:
    """Turn a realised curve into a requirement set it satisfies.

    Thresholds come from the curve's own band aggregates, loosened by an
    offset drawn per template from ``intent_spec`` and rounded outward.
    """
    spec = spec or BandSpec()
    rng = random.Random(f"{seed}:{source.id}")
    reqs = []
    for tpl in intent_spec.templates:
        band = spec[tpl.band]
        if tpl.direction is not None:
            intent = Optimize(tpl.direction, tpl.aggregator)
        else:
            realized = evaluate_expr(Agg(tpl.aggregator, intent_spec.metric.name, band), source)
            lo, hi = tpl.offset
            offset = rng.uniform(lo, hi) if hi > lo else lo
            value = outward_threshold(realized, offset, tpl.comparator, intent_spec.decimals)
            intent = Threshold(tpl.comparator, value, tpl.aggregator)
        text = requirement_text(tpl.band, band, intent_spec.metric, intent, spec.z_units)
        reqs.append(Requirement(band, intent_spec.metric, intent, text))
    return RequirementSet(id or f"req-{source.id}", tuple(reqs))


def oracle_ranking(reqs: RequirementSet, insts: Sequence[TestInstance], **rank_kw) -> Ranking:
    """Reference ranking from the requirements' own ground-truth formulation."""
    return induced_ranking(formulation_from_requirements(reqs), insts, id=f"oracle-{reqs.id}", **rank_kw)


# --- corruption ------------------------------------------------------------


class CorruptionKind(str, Enum):
    FLIP_COMPARATOR = "flip_comparator"
    SHIFT_BAND = "shift_band"
    PERTURB_THRESHOLD = "perturb_threshold"
    SWAP_AGG = "swap_agg"


SWAP_TARGET = {Aggregator.MIN: Aggregator.MEAN, Aggregator.MAX: Aggregator.MEAN, Aggregator.MEAN: Aggregator.MIN}


def _map_nodes(expr: Expr, fn, counter: list[int]) -> Expr:
    """Rebuild ``expr`` bottom-up, applying ``fn(node, ordinal)`` to Agg and Const leaves."""
    if isinstance(expr, (Agg, Const)):
        counter[0] += 1
        return fn(expr, counter[0] - 1)
    if isinstance(expr, Neg):
        return Neg(_map_nodes(expr.child, fn, counter))
    return Sub(_map_nodes(expr.left, fn, counter), _map_nodes(expr.right, fn, counter))


def _leaves(expr: Expr) -> list:
    if isinstance(expr, (Agg, Const)):
        return [expr]
    if isinstance(expr, Neg):
        return _leaves(expr.child)
    return _leaves(expr.left) + _leaves(expr.right)


def _replace_leaf(expr: Expr, ordinal: int, new) -> Expr:
    return _map_nodes(expr, lambda node, k: new if k == ordinal else node, [0])


def _flip(expr: Expr) -> Expr:
    if isinstance(expr, Sub):
        return Sub(expr.right, expr.left)
    if isinstance(expr, Neg):
        return expr.child
    return Neg(expr)


def corrupt_formulation(
    f: Formulation,
    kind: CorruptionKind | str,
    seed: int | str = 0,
    *,
    delta: float | None = None,
    factor: float = 0.1,
    domain: tuple[float, float] = (BandSpec.z_min, BandSpec.z_max),
) -> tuple[Formulation, dict]:
    """Mutate exactly one item of ``f``; return the result and a description.

    ``delta`` (band shift) defaults to the width of the targeted band;
    ``factor`` scales the targeted constant by ``1 + factor``.
    """
    kind = CorruptionKind(kind)
    rng = random.Random(f"{seed}:{kind.value}:{f.id}")
    # candidates: (item index, leaf ordinal or None, replacement expr, detail)
    candidates = []
    for i, item in enumerate(f.items):
        leaves = _leaves(item.expr)
        if kind is CorruptionKind.FLIP_COMPARATOR:
            if item.kind is ItemKind.CONSTRAINT:
                new = _flip(item.expr)
                if expr_depth(new) <= MAX_EXPR_DEPTH:
                    candidates.append((i, new, {}))
        elif kind is CorruptionKind.SHIFT_BAND:
            for k, leaf in enumerate(leaves):
                if not isinstance(leaf, Agg):
                    continue
                d = leaf.band.width if delta is None else float(delta)
                for sign in (1.0, -1.0):
                    lo, hi = leaf.band.lo + sign * d, leaf.band.hi + sign * d
                    if domain[0] <= lo and hi <= domain[1]:
                        new_agg = Agg(leaf.op, leaf.metric, Band(lo, hi))
                        candidates.append((i, _replace_leaf(item.expr, k, new_agg), {"shift": sign * d}))
        elif kind is CorruptionKind.PERTURB_THRESHOLD:
            for k, leaf in enumerate(leaves):
                if isinstance(leaf, Const):
                    new_const = Const(leaf.value * (1.0 + factor))
                    candidates.append((i, _replace_leaf(item.expr, k, new_const), {"from": leaf.value, "to": new_const.value}))
        elif kind is CorruptionKind.SWAP_AGG:
            for k, leaf in enumerate(leaves):
                if isinstance(leaf, Agg):
                    target = SWAP_TARGET[leaf.op]
                    new_agg = Agg(target, leaf.metric, leaf.band)
                    candidates.append((i, _replace_leaf(item.expr, k, new_agg), {"from": leaf.op.value, "to": target.value}))
    if not candidates:
        raise NoEligibleItem(f"formulation {f.id!r} has no item eligible for {kind.value}")
    i, new_expr, detail = rng.choice(candidates)
    items = list(f.items)
    items[i] = FormulationItem(items[i].kind, items[i].name, new_expr)
    meta = {"kind": kind.value, "item": f.items[i].name, "index": i, **detail}
    return Formulation(f.id, tuple(items)), meta

"""Numerical evaluation of IR items on test instances."""

from __future__ import annotations

import math
from typing import Literal

import numpy as np

from apf.errors import EmptyBand, NonFinite
from apf.formulation.types import (
    Agg,
    Aggregator,
    Const,
    Expr,
    Formulation,
    FormulationItem,
    Neg,
    Sub,
    TestInstance,
    format_real,
)

EmptyBandPolicy = Literal["error", "zero"]

_FOLDS = {Aggregator.MIN: np.min, Aggregator.MAX: np.max, Aggregator.MEAN: np.mean}


def band_values(inst: TestInstance, agg: Agg) -> np.ndarray:
    """Curve values with ``lo <= z <= hi`` (closed on both ends)."""
    mask = (inst.z >= agg.band.lo) & (inst.z <= agg.band.hi)
    return inst.values[mask]


def evaluate_expr(expr: Expr, inst: TestInstance, empty_band: EmptyBandPolicy = "error") -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Agg):
        vals = band_values(inst, expr)
        if vals.size == 0:
            if empty_band == "zero":
                return 0.0
            band = f"[{format_real(expr.band.lo)}, {format_real(expr.band.hi)}]"
            raise EmptyBand(f"no samples of {expr.metric} in band {band}", inst.id, expr.band)
        return float(_FOLDS[expr.op](vals))
    if isinstance(expr, Neg):
        return -evaluate_expr(expr.child, inst, empty_band)
    if isinstance(expr, Sub):
        return evaluate_expr(expr.left, inst, empty_band) - evaluate_expr(expr.right, inst, empty_band)
    raise TypeError(f"not an IR node: {expr!r}")


def evaluate_item(item: FormulationItem, inst: TestInstance, *, empty_band: EmptyBandPolicy = "error") -> float:
    """Objective value to minimise, or constraint residual (satisfied iff < 0).

    ``empty_band="zero"`` reproduces generated code that returns 0.0 when the
    band mask selects nothing; the default raises :class:`EmptyBand`.
    """
    value = evaluate_expr(item.expr, inst, empty_band)
    if not math.isfinite(value):
        raise NonFinite(f"item {item.name!r} evaluated to {value}", inst.id)
    return value


def constraint_residuals(f: Formulation, inst: TestInstance, *, empty_band: EmptyBandPolicy = "error") -> list[float]:
    return [evaluate_item(c, inst, empty_band=empty_band) for c in f.constraints]


def feasibility(
    f: Formulation,
    inst: TestInstance,
    *,
    tol: float = 0.0,
    empty_band: EmptyBandPolicy = "error",
) -> tuple[bool, float]:
    """Return ``(feasible, violation)``.

    A constraint is satisfied iff its residual is ``< tol`` (strict; ``tol``
    defaults to 0). ``violation`` is the sum of positive residual parts, so a
    residual sitting exactly on 0 is infeasible with zero violation.
    """
    residuals = constraint_residuals(f, inst, empty_band=empty_band)
    feasible = all(g < tol for g in residuals)
    violation = float(sum(max(0.0, g) for g in residuals))
    return feasible, violation

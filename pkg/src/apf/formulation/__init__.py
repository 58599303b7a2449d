from apf.formulation.evaluate import (
    band_values,
    constraint_residuals,
    evaluate_expr,
    evaluate_item,
    feasibility,
)
from apf.formulation.grammar import parse_formulation, parse_item, print_expr, print_formulation, print_item_body
from apf.formulation.types import (
    Agg,
    Aggregator,
    Band,
    Comparator,
    Const,
    DesignIntent,
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
    canonical_real,
    default_item_name,
    format_real,
    formulation_from_requirements,
    item_for_requirement,
)

__all__ = [
    "Agg",
    "Aggregator",
    "Band",
    "Comparator",
    "Const",
    "DesignIntent",
    "Direction",
    "Expr",
    "Formulation",
    "FormulationItem",
    "ItemKind",
    "MetricId",
    "Neg",
    "Optimize",
    "Requirement",
    "RequirementSet",
    "Sub",
    "TestInstance",
    "Threshold",
    "band_values",
    "canonical_real",
    "constraint_residuals",
    "default_item_name",
    "evaluate_expr",
    "evaluate_item",
    "feasibility",
    "format_real",
    "formulation_from_requirements",
    "item_for_requirement",
    "parse_formulation",
    "parse_item",
    "print_expr",
    "print_formulation",
    "print_item_body",
]

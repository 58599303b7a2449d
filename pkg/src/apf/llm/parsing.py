"""Strict parsers for model responses."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Sequence

from apf.errors import (
    AmbiguousJson,
    DataError,
    IndexCoverage,
    NoJsonFound,
    NotAPermutation,
    SchemaViolation,
)
from apf.formulation import Formulation, ItemKind, RequirementSet, print_item_body
from apf.formulation.grammar import parse_item
from apf.formulation.types import FormulationItem
from apf.ranking import Ranking

_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*$", re.MULTILINE)
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_GENERATION_KEYS = ("requirement_index", "function_type", "function_name", "expression")


def strip_fences(text: str) -> str:
    return _FENCE_RE.sub("", text)


def extract_json(text: str, container: type = list) -> Any:
    """Return the single top-level JSON array (or object) embedded in ``text``.

    Leading prose and Markdown code fences are tolerated. More than one
    candidate is rejected as ambiguous rather than guessed at.
    """
    opener = "[" if container is list else "{"
    body = strip_fences(text)
    decoder = json.JSONDecoder()
    found = []
    pos = 0
    while True:
        start = body.find(opener, pos)
        if start < 0:
            break
        try:
            value, end = decoder.raw_decode(body, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(value, container):
            found.append(value)
        pos = end
    if not found:
        raise NoJsonFound(f"no JSON {container.__name__} found in response")
    if len(found) > 1:
        raise AmbiguousJson(f"{len(found)} candidate JSON {container.__name__}s in response")
    return found[0]


def parse_generation_response(text: str, reqs: RequirementSet, id: str | None = None) -> Formulation:
    """Map a generation response to a Formulation ordered by requirement index."""
    data = extract_json(text, list)
    n = len(reqs.requirements)
    by_index: dict[int, FormulationItem] = {}
    seen: list[int] = []
    for pos, obj in enumerate(data):
        if not isinstance(obj, dict):
            raise SchemaViolation(f"element {pos} is not an object")
        missing = [k for k in _GENERATION_KEYS if k not in obj]
        if missing:
            raise SchemaViolation(f"element {pos} lacks keys {missing}")
        idx = obj["requirement_index"]
        if isinstance(idx, bool) or not isinstance(idx, int):
            raise SchemaViolation(f"element {pos}: requirement_index must be an integer")
        ftype = obj["function_type"]
        if ftype not in (ItemKind.OBJECTIVE.value, ItemKind.CONSTRAINT.value):
            raise SchemaViolation(f"element {pos}: function_type must be 'objective' or 'constraint', got {ftype!r}")
        name = obj["function_name"]
        if not isinstance(name, str) or not _NAME_RE.match(name):
            raise SchemaViolation(f"element {pos}: invalid function_name {name!r}")
        expression = obj["expression"]
        if not isinstance(expression, str):
            raise SchemaViolation(f"element {pos}: expression must be a string")
        try:
            parsed = parse_item(expression)
        except DataError as exc:
            raise SchemaViolation(f"element {pos}: {exc}") from None
        if parsed.kind.value != ftype:
            raise SchemaViolation(f"element {pos}: function_type {ftype!r} but expression is a {parsed.kind.value}")
        seen.append(idx)
        by_index[idx] = FormulationItem(parsed.kind, name, parsed.expr)
    expected = set(range(1, n + 1))
    duplicate = {i for i in seen if seen.count(i) > 1}
    missing = expected - set(seen)
    extra = set(seen) - expected
    if duplicate or missing or extra:
        raise IndexCoverage(missing, duplicate, extra)
    items = tuple(by_index[i] for i in range(1, n + 1))
    try:
        return Formulation(id if id is not None else reqs.id, items)
    except DataError as exc:
        raise SchemaViolation(str(exc)) from None


def generation_payload(f: Formulation) -> list[dict]:
    """Inverse of :func:`parse_generation_response` for an item-per-requirement formulation."""
    return [
        {
            "requirement_index": i,
            "function_type": item.kind.value,
            "function_name": item.name,
            "expression": print_item_body(item),
        }
        for i, item in enumerate(f.items, start=1)
    ]


@dataclass(frozen=True)
class AnnotationResult:
    ranking: Ranking
    raw_response: str


def parse_annotation_response(text: str, ids: Sequence[str], ranking_id: str = "") -> AnnotationResult:
    """Read a best-first list of curve ids and turn it into ranks 1..n."""
    order = extract_json(text, list)
    if not all(isinstance(x, str) for x in order):
        bad = [x for x in order if not isinstance(x, str)]
        raise NotAPermutation(missing=(), extra=[str(b) for b in bad])
    expected = set(ids)
    duplicate = {x for x in order if order.count(x) > 1}
    missing = expected - set(order)
    extra = set(order) - expected
    if duplicate or missing or extra or len(order) != len(ids):
        raise NotAPermutation(missing, extra, duplicate)
    return AnnotationResult(Ranking.from_order(order, id=ranking_id), text)


def serialize_order(ranking: Ranking) -> str:
    return json.dumps(ranking.order())


def parse_paraphrase_response(text: str) -> dict[int, list[str]]:
    """Variants keyed by 1-based requirement number; malformed entries are dropped."""
    data = extract_json(text, dict)
    out: dict[int, list[str]] = {}
    for key, value in data.items():
        try:
            idx = int(key)
        except (TypeError, ValueError):
            continue
        if isinstance(value, list) and all(isinstance(s, str) and s.strip() for s in value):
            out[idx] = [s.strip() for s in value]
    return out

"""Prompt templates and builders.

Templates live in ``templates/*.txt`` and are split into tagged sections by
``=== TAG ===`` marker lines. A rendered prompt is the plain concatenation
of its sections, in order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Sequence

from apf.errors import EmptyRequirementSet, PromptBudgetExceeded, TooFewInstances
from apf.formulation import RequirementSet, TestInstance

TEMPLATE_VERSION = "v1"
DEFAULT_PROMPT_BUDGET = 60_000
DEFAULT_EXPERT_ROLE = "an expert antenna design engineer"

_MARKER_RE = re.compile(r"^=== ([A-Z_]+) ===$")
_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}|\{(\w+)\}")


class SectionTag(str, Enum):
    TASK = "TASK"
    EXPERT_EXAMPLE = "EXPERT_EXAMPLE"
    INSTANCE_TABLE = "INSTANCE_TABLE"
    REQUIREMENTS_QUERY = "REQUIREMENTS_QUERY"
    RULES = "RULES"


class PromptKind(str, Enum):
    PARAPHRASE = "paraphrase"
    GENERATION = "generation"
    ANNOTATION = "annotation"


@dataclass(frozen=True)
class Prompt:
    kind: PromptKind
    sections: tuple[tuple[SectionTag, str], ...]

    def render(self) -> str:
        return "".join(text for _, text in self.sections)

    def section(self, tag: SectionTag) -> str | None:
        for t, text in self.sections:
            if t is tag:
                return text
        return None

    @property
    def tags(self) -> list[SectionTag]:
        return [t for t, _ in self.sections]


@lru_cache(maxsize=None)
def load_template(name: str) -> tuple[tuple[SectionTag, str], ...]:
    raw = resources.files("apf.llm").joinpath("templates", f"{name}_{TEMPLATE_VERSION}.txt").read_text(encoding="utf-8")
    sections: list[tuple[SectionTag, list[str]]] = []
    for line in raw.splitlines():
        m = _MARKER_RE.match(line)
        if m:
            sections.append((SectionTag(m.group(1)), []))
        elif sections:
            sections[-1][1].append(line)
    return tuple((tag, "\n".join(lines) + "\n") for tag, lines in sections)


def fill(template: str, values: dict[str, str]) -> str:
    """Substitute ``{name}`` / ``{{name}}`` placeholders in a single pass.

    Substituted text is never rescanned, so braces inside values survive
    literally; unknown placeholders are left untouched.
    """

    def repl(m: re.Match) -> str:
        key = m.group(1) or m.group(2)
        return values[key] if key in values else m.group(0)

    return _PLACEHOLDER_RE.sub(repl, template)


def _build(kind: PromptKind, template: str, values: dict[str, str], skip=()) -> Prompt:
    sections = tuple((tag, fill(text, values)) for tag, text in load_template(template) if tag not in skip)
    return Prompt(kind, sections)


def numbered(texts: Sequence[str]) -> str:
    return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=1))


def requirements_text(reqs: RequirementSet) -> str:
    return numbered([r.text for r in reqs])


def _check_nonempty(reqs: RequirementSet | None):
    if reqs is None or len(reqs.requirements) == 0:
        raise EmptyRequirementSet("requirement set is empty")


def build_paraphrase_prompt(reqs: RequirementSet, v: int) -> Prompt:
    _check_nonempty(reqs)
    if v < 1:
        raise ValueError(f"number of variants must be >= 1, got {v}")
    return _build(
        PromptKind.PARAPHRASE,
        "paraphrase",
        {"num_versions": str(v), "requirements_text": requirements_text(reqs)},
    )


def build_generation_prompt(reqs: RequirementSet) -> Prompt:
    _check_nonempty(reqs)
    return _build(PromptKind.GENERATION, "generation", {"requirements_text": requirements_text(reqs)})


def instance_table(insts: Sequence[TestInstance], z_digits: int = 6, value_digits: int = 4) -> str:
    """JSON array with one ``{"curve", "data"}`` object per line."""
    rows = []
    for inst in insts:
        data = [[round(z, z_digits), round(v, value_digits)] for z, v in inst.samples]
        rows.append(json.dumps({"curve": inst.id, "data": data}, separators=(",", ":")))
    return "[\n" + ",\n".join(rows) + "\n]"


def build_annotation_prompt(
    reqs: RequirementSet,
    insts: Sequence[TestInstance],
    expert_example: str | None = None,
    *,
    budget: int = DEFAULT_PROMPT_BUDGET,
    expert_role: str = DEFAULT_EXPERT_ROLE,
    axis_x: str = "frequency",
    axis_y: str = "radiation_efficiency",
    data_description: str = "Frequency is given in GHz and radiation efficiency in dB.",
) -> Prompt:
    _check_nonempty(reqs)
    if len(insts) < 2:
        raise TooFewInstances(f"annotation needs at least 2 instances, got {len(insts)}")
    objectives = [r.text for r in reqs if r.is_objective]
    constraints = [r.text for r in reqs if not r.is_objective]
    values = {
        "Expert_Role": expert_role,
        "Example_Section": expert_example or "",
        "Axis_X_Name": axis_x,
        "Axis_Y_Name": axis_y,
        "Data_Description": data_description,
        "JSON_Data_of_Curves": instance_table(insts),
        "List_of_Objectives": numbered(objectives) if objectives else "None.",
        "List_of_Constraints": numbered(constraints) if constraints else "None.",
    }
    skip = () if expert_example else (SectionTag.EXPERT_EXAMPLE,)
    prompt = _build(PromptKind.ANNOTATION, "annotation", values, skip)
    size = len(prompt.render())
    if size > budget:
        raise PromptBudgetExceeded(size, budget)
    return prompt

"""Dataset rows and JSON-lines IO."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from apf.errors import DataError
from apf.formulation import Formulation, RequirementSet, parse_formulation, print_formulation


@dataclass(frozen=True)
class DatasetRecord:
    """One (requirement set, formulation) pair with its lineage.

    Base records have ``base_id == id``. Augmented children point at their
    base and store the permutation applied to both requirements and items:
    child position ``j`` holds base position ``permutation[j]``.
    """

    id: str
    base_id: str
    requirement_set: RequirementSet
    formulation: Formulation
    score: float | None = None
    augmented: bool = False
    permutation: tuple[int, ...] | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.permutation is not None:
            object.__setattr__(self, "permutation", tuple(int(p) for p in self.permutation))
        object.__setattr__(self, "flags", tuple(self.flags))
        if self.augmented and (self.permutation is None or self.base_id == self.id):
            raise ValueError(f"augmented record {self.id!r} needs a base_id and a permutation")

    def with_score(self, score: float | None) -> "DatasetRecord":
        return replace(self, score=score)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "base_id": self.base_id,
            "augmented": self.augmented,
            "permutation": list(self.permutation) if self.permutation is not None else None,
            "score": self.score,
            "flags": list(self.flags),
            "requirement_set": self.requirement_set.to_dict(),
            "formulation_id": self.formulation.id,
            "formulation": print_formulation(self.formulation),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRecord":
        return cls(
            id=d["id"],
            base_id=d["base_id"],
            requirement_set=RequirementSet.from_dict(d["requirement_set"]),
            formulation=parse_formulation(d["formulation"], id=d.get("formulation_id", d["id"])),
            score=d.get("score"),
            augmented=bool(d.get("augmented", False)),
            permutation=d.get("permutation"),
            flags=tuple(d.get("flags", ())),
        )


@dataclass(frozen=True)
class SftSample:
    instruction: str
    input: str
    output: str
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"instruction": self.instruction, "input": self.input, "output": self.output, "meta": self.meta}


def dumps_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False)


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict]) -> int:
    """Write rows through ``<path>.partial`` and rename on success.

    An interrupted write leaves the ``.partial`` file behind and never a
    truncated final file.
    """
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    n = 0
    with open(partial, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row))
            fh.write("\n")
            n += 1
    os.replace(partial, path)
    return n


def read_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_json(path: str | os.PathLike, obj) -> None:
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    partial.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(partial, path)

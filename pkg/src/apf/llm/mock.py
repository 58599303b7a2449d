"""Deterministic offline provider.

The mock answers the three prompt kinds from registered ground truth:

* generation: the requirement set's own formulation, corrupted with
  probability ``p`` in ``corrupt`` mode;
* annotation: the oracle ranking over the tabulated curves, with ``k``
  random adjacent swaps in ``noisy`` mode;
* paraphrase: ``v`` template rewordings per requirement (numbers untouched).

Every response is a pure function of the rendered prompt and ``seed``.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from typing import Iterable, Sequence

from apf.errors import NoEligibleItem, ProviderError
from apf.formulation import RequirementSet, TestInstance, formulation_from_requirements
from apf.llm.parsing import extract_json, generation_payload
from apf.llm.prompts import Prompt, PromptKind, SectionTag, build_annotation_prompt, build_generation_prompt
from apf.synthbench import CorruptionKind, corrupt_formulation, oracle_ranking

MODES = ("faithful", "corrupt", "noisy")
DEFAULT_CORRUPTIONS = (CorruptionKind.FLIP_COMPARATOR, CorruptionKind.SHIFT_BAND)

_OPENERS = (
    "{text}",
    "It is required that {lower}",
    "Design requirement: {text}",
    "Please ensure the following holds: {lower}",
    "As a design target, {lower}",
)
_CLOSERS = ("", " This is mandatory.", " No exceptions are allowed.")
_NUM_VERSIONS_RE = re.compile(r"generate exactly (\d+) distinct")
_NUMBERED_RE = re.compile(r"^(\d+)\. (.*)$")


def prompt_rng(seed, prompt: Prompt) -> random.Random:
    digest = hashlib.sha256(f"{seed}\x00{prompt.render()}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class MockProvider:
    def __init__(
        self,
        mode: str = "faithful",
        seed: int = 0,
        *,
        p: float = 0.3,
        kinds: Sequence[CorruptionKind | str] = DEFAULT_CORRUPTIONS,
        k: int = 1,
        corruption_options: dict | None = None,
        max_concurrency: int = 1,
    ):
        if mode not in MODES:
            raise ValueError(f"unknown mock mode {mode!r}; expected one of {MODES}")
        if not 0.0 <= p <= 1.0:
            raise ValueError("corruption probability must lie in [0, 1]")
        self.mode = mode
        self.seed = seed
        self.p = p
        self.kinds = tuple(CorruptionKind(x) for x in kinds)
        self.k = k
        self.corruption_options = dict(corruption_options or {})
        self.max_concurrency = max_concurrency
        self._lock = threading.Lock()
        self._gen_index: dict[str, RequirementSet] = {}
        self._ann_index: dict[str, RequirementSet] = {}
        self._instances: dict[str, TestInstance] = {}
        self.calls = 0

    def register(self, reqsets: RequirementSet | Iterable[RequirementSet], instances: Iterable[TestInstance] = ()):
        """Make requirement sets (and curves) known as ground truth."""
        if isinstance(reqsets, RequirementSet):
            reqsets = [reqsets]
        with self._lock:
            for rs in reqsets:
                self._gen_index[build_generation_prompt(rs).section(SectionTag.REQUIREMENTS_QUERY)] = rs
                self._ann_index[_annotation_query(rs)] = rs
            for inst in instances:
                self._instances[inst.id] = inst

    def complete(self, prompt: Prompt) -> str:
        if not isinstance(prompt, Prompt):
            raise ProviderError("mock provider needs a structured Prompt")
        with self._lock:
            self.calls += 1
        if prompt.kind is PromptKind.GENERATION:
            return self._generation(prompt)
        if prompt.kind is PromptKind.ANNOTATION:
            return self._annotation(prompt)
        return self._paraphrase(prompt)

    def _lookup(self, index: dict, prompt: Prompt) -> RequirementSet:
        query = prompt.section(SectionTag.REQUIREMENTS_QUERY)
        try:
            return index[query]
        except KeyError:
            raise ProviderError("mock provider has no ground truth for this requirement set") from None

    def _generation(self, prompt: Prompt) -> str:
        reqs = self._lookup(self._gen_index, prompt)
        f = formulation_from_requirements(reqs)
        if self.mode == "corrupt":
            rng = prompt_rng(self.seed, prompt)
            if rng.random() < self.p:
                kinds = list(self.kinds)
                rng.shuffle(kinds)
                sub_seed = rng.getrandbits(32)
                for kind in kinds:
                    try:
                        f, _ = corrupt_formulation(f, kind, sub_seed, **self.corruption_options.get(kind.value, {}))
                        break
                    except NoEligibleItem:
                        continue
        return "```json\n" + json.dumps(generation_payload(f), indent=2) + "\n```"

    def _annotation(self, prompt: Prompt) -> str:
        reqs = self._lookup(self._ann_index, prompt)
        curves = extract_json(prompt.section(SectionTag.INSTANCE_TABLE), list)
        insts = []
        for curve in curves:
            known = self._instances.get(curve["curve"])
            insts.append(known if known is not None else TestInstance(curve["curve"], tuple(map(tuple, curve["data"]))))
        order = oracle_ranking(reqs, insts).order()
        if self.mode == "noisy":
            rng = prompt_rng(self.seed, prompt)
            for _ in range(self.k):
                j = rng.randrange(len(order) - 1)
                order[j], order[j + 1] = order[j + 1], order[j]
        return json.dumps(order)

    def _paraphrase(self, prompt: Prompt) -> str:
        m = _NUM_VERSIONS_RE.search(prompt.render())
        v = int(m.group(1)) if m else 1
        rng = prompt_rng(self.seed, prompt)
        frames = [(o, c) for c in _CLOSERS for o in _OPENERS]
        out = {}
        for line in prompt.section(SectionTag.REQUIREMENTS_QUERY).splitlines():
            mm = _NUMBERED_RE.match(line)
            if not mm:
                continue
            text = mm.group(2)
            lower = text[:1].lower() + text[1:]
            start = rng.randrange(len(frames))
            chosen = [frames[(start + i) % len(frames)] for i in range(min(v, len(frames)))]
            out[mm.group(1)] = [o.format(text=text, lower=lower) + c for o, c in chosen]
        return json.dumps(out, indent=2)


def _annotation_query(reqs: RequirementSet) -> str:
    # Only the requirements section is needed; two dummy curves satisfy the builder.
    dummy = [TestInstance(f"_{i}", ((0.0, 0.0), (1.0, 0.0))) for i in range(2)]
    return build_annotation_prompt(reqs, dummy).section(SectionTag.REQUIREMENTS_QUERY)

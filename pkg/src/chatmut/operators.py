"""The 24 conversation-level mutation operators.

Operators are data (:class:`OperatorSpec`). :func:`enumerate_targets`
turns a spec into concrete :class:`MutationDescriptor` rows, one per
applicable element, and :func:`apply` actuates one descriptor through a
platform :class:`~chatmut.metamodel.Finder`, leaving the input untouched.
"""

from __future__ import annotations

import enum
import hashlib
import random
import string
from dataclasses import dataclass
from pathlib import PurePosixPath
from typing import Any, Iterator

from .errors import SelfReplacement, StaleDescriptor, UnknownOperator
from .metamodel import (
    ABSENT,
    DEFAULT_PRIORITY,
    MAX_PRIORITY,
    ChatbotModel,
    Edit,
    Element,
    EntityKind,
    Finder,
    Loc,
    element_index,
)


class Category(str, enum.Enum):
    CHATBOT = "Chatbot"
    FLOW = "Flow"
    INTENT = "Intent"
    PARAMETER = "Parameter"
    INPUT = "Input"


class Transform(str, enum.Enum):
    REMOVE = "Remove"
    REPLACE_WITH_EXISTING = "ReplaceWithExisting"
    RANDOM_INT = "ReplaceWithRandomInt"
    RANDOM_STRING = "ReplaceWithRandomString"
    TOGGLE = "Toggle"


@dataclass(frozen=True)
class OperatorSpec:
    id: str
    category: Category
    target_category: str
    transform: Transform
    prop: str | None = None
    int_range: tuple[int, int] | None = None
    applicability: str = "at least one target element"
    description: str = ""

    def is_applicable(self, model: ChatbotModel) -> bool:
        return bool(enumerate_targets(model, self.id))


_C, _F, _I, _P, _N = Category.CHATBOT, Category.FLOW, Category.INTENT, Category.PARAMETER, Category.INPUT
_T = Transform

_CATALOG = (
    OperatorSpec("changeChatbotLanguage", _C, "languages", _T.REPLACE_WITH_EXISTING,
                 applicability=">= 2 supported languages",
                 description="replace a supported language with another existing one"),
    OperatorSpec("removeChatbotIntent", _C, "intents", _T.REMOVE, description="remove an intent"),
    OperatorSpec("removeChatbotEntity", _C, "entities", _T.REMOVE, applicability="simple entities",
                 description="remove an entity"),
    OperatorSpec("removeChatbotFlow", _C, "flows", _T.REMOVE, applicability="output context with a consumer",
                 description="sever a flow by deleting the producing output context"),
    OperatorSpec("changeFlowInContextName", _F, "input_contexts", _T.REPLACE_WITH_EXISTING,
                 applicability=">= 2 distinct context names",
                 description="replace an input context name with another existing name"),
    OperatorSpec("removeFlowInContextName", _F, "input_contexts", _T.REMOVE,
                 description="remove an input context"),
    OperatorSpec("changeFlowOutContextName", _F, "output_contexts", _T.REPLACE_WITH_EXISTING, prop="name",
                 applicability=">= 2 distinct context names",
                 description="replace an output context name with another existing name"),
    OperatorSpec("removeFlowOutContextName", _F, "output_contexts", _T.REMOVE, prop="name",
                 description="remove an output context name"),
    OperatorSpec("changeFlowOutContextLifespan", _F, "output_contexts", _T.RANDOM_INT, prop="lifespan",
                 int_range=(1, 3), description="replace an output context lifespan with a value in [1, 3]"),
    OperatorSpec("removeFlowOutContextParameter", _F, "context_parameters", _T.REMOVE,
                 description="remove an output context parameter"),
    OperatorSpec("changeIntentName", _I, "intents", _T.REPLACE_WITH_EXISTING, prop="name",
                 applicability=">= 2 distinct intent names",
                 description="replace an intent name with another existing name"),
    OperatorSpec("toggleIntentFallback", _I, "intents", _T.TOGGLE, prop="fallback",
                 description="flip the fallback flag"),
    OperatorSpec("removeIntentFallback", _I, "intents", _T.REMOVE, prop="fallback",
                 applicability="fallback flag present", description="remove the fallback flag"),
    OperatorSpec("changeIntentPriority", _I, "intents", _T.RANDOM_INT, prop="priority",
                 int_range=(0, MAX_PRIORITY), description="replace a priority with a value in [0, 1000000]"),
    OperatorSpec("removeIntentParameter", _I, "parameters", _T.REMOVE, description="remove an intent parameter"),
    OperatorSpec("changeParameterName", _P, "parameters", _T.REPLACE_WITH_EXISTING, prop="name",
                 applicability=">= 2 distinct parameter names in the same intent",
                 description="replace a parameter name with a sibling parameter's name"),
    OperatorSpec("removeParameterName", _P, "parameters", _T.REMOVE, prop="name",
                 applicability="name present", description="remove a parameter name"),
    OperatorSpec("toggleParameterIsRequired", _P, "parameters", _T.TOGGLE, prop="required",
                 description="flip the isRequired flag"),
    OperatorSpec("removeParameterPrompt", _P, "prompts", _T.REMOVE, description="remove a parameter prompt"),
    OperatorSpec("changeSEntityName", _N, "entities", _T.REPLACE_WITH_EXISTING, prop="name",
                 applicability="simple entity and >= 2 distinct entity names",
                 description="replace a simple entity name with another existing name"),
    OperatorSpec("removeSEntityName", _N, "entities", _T.REMOVE, prop="name",
                 applicability="simple entity with a name", description="remove a simple entity name"),
    OperatorSpec("changeSInputValue", _N, "entries", _T.RANDOM_STRING, prop="value",
                 applicability="simple entity entries", description="replace an entry value with a random string"),
    OperatorSpec("changeSInputSynonym", _N, "synonyms", _T.RANDOM_STRING,
                 applicability="simple entity synonyms", description="replace a synonym with a random string"),
    OperatorSpec("changeTActionValue", _N, "text_variants", _T.RANDOM_STRING,
                 description="replace a text response variant with a random string"),
)
_BY_ID = {spec.id: spec for spec in _CATALOG}
OPERATOR_IDS = tuple(_BY_ID)


def operator_catalog() -> list[OperatorSpec]:
    return list(_CATALOG)


def get_operator(op_id: str) -> OperatorSpec:
    try:
        return _BY_ID[op_id]
    except KeyError:
        raise UnknownOperator(op_id) from None


# -- randomness ---------------------------------------------------------------


@dataclass(frozen=True)
class RandomPolicy:
    seed: int = 0
    string_alphabet: str = string.ascii_lowercase
    string_length: int = 12

    def subseed(self, op_id: str, ordinal: int) -> int:
        digest = hashlib.sha256(f"{self.seed}:{op_id}:{ordinal}".encode()).digest()
        return int.from_bytes(digest[:8], "big")

    def draw_int(self, subseed: int, lo: int, hi: int, original: Any) -> int:
        rng = random.Random(subseed)
        while True:
            value = rng.randint(lo, hi)
            if value != original:
                return value

    def draw_string(self, subseed: int, original: Any) -> str:
        rng = random.Random(subseed)
        while True:
            value = "".join(rng.choice(self.string_alphabet) for _ in range(self.string_length))
            if value != original:
                return value

    def draw_choice(self, subseed: int, pool: list[str]) -> str:
        return pool[random.Random(subseed).randrange(len(pool))]


# -- descriptors --------------------------------------------------------------


@dataclass(frozen=True)
class MutationDescriptor:
    mutant_id: str
    operator: str
    target: Loc
    original_value: Any
    mutated_value: Any
    seed: int = 0
    companions: tuple[str, ...] = ()

    @property
    def category(self) -> Category:
        return get_operator(self.operator).category

    def locations(self) -> list[Loc]:
        """Every location this mutant changes (target plus removed companion files)."""
        return [self.target] + [Loc(f) for f in self.companions]

    def to_dict(self) -> dict:
        return {
            "mutant_id": self.mutant_id,
            "operator": self.operator,
            "category": self.category.value,
            "target": {"file": self.target.file, "pointer": self.target.pointer},
            "original_value": _encode(self.original_value),
            "mutated_value": _encode(self.mutated_value),
            "seed": self.seed,
            "companions": list(self.companions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MutationDescriptor:
        return cls(
            mutant_id=d["mutant_id"],
            operator=d["operator"],
            target=Loc(d["target"]["file"], d["target"]["pointer"]),
            original_value=_decode(d["original_value"]),
            mutated_value=_decode(d["mutated_value"]),
            seed=int(d.get("seed", 0)),
            companions=tuple(d.get("companions", ())),
        )


_ABSENT_JSON = {"$absent": True}


def _encode(value: Any) -> Any:
    return dict(_ABSENT_JSON) if value is ABSENT else value


def _decode(value: Any) -> Any:
    return ABSENT if value == _ABSENT_JSON else value


def _stem(path: str) -> str:
    stem = PurePosixPath(path).stem
    return "".join(c if c.isalnum() or c in "._-" else "-" for c in stem)


# -- enumeration --------------------------------------------------------------


@dataclass
class _Candidate:
    element: Element
    loc: Loc
    pool: list[str] | None = None


def _distinct(values, exclude: Any) -> list[str]:
    seen: dict[str, str] = {}
    excl = exclude.casefold() if isinstance(exclude, str) else None
    for v in values:
        if not isinstance(v, str) or not v:
            continue
        if v.casefold() == excl or v.casefold() in seen:
            continue
        seen[v.casefold()] = v
    return list(seen.values())


def _candidates(model: ChatbotModel, spec: OperatorSpec, finder: Finder) -> Iterator[_Candidate]:
    index = element_index(model)
    elements = index[spec.target_category]
    if spec.target_category == "entities":
        elements = tuple(el for el in elements if model.entities[el.key[1]].kind is EntityKind.SIMPLE)
    elif spec.target_category in ("entries", "synonyms"):
        elements = tuple(el for el in elements if model.entities[el.key[1]].kind is EntityKind.SIMPLE)
    context_names = [c for it in model.intents for c in it.input_contexts] + [
        oc.name for it in model.intents for oc in it.output_contexts
    ]
    for el in elements:
        if el.loc is None:
            continue
        loc = finder.property_loc(model, el.key, spec.prop) if spec.prop else el.loc
        pool = None
        if spec.transform is Transform.REPLACE_WITH_EXISTING:
            current = finder.read(model, loc)
            if spec.id == "changeChatbotLanguage":
                pool = _distinct(model.supported_languages, current)
            elif spec.id in ("changeFlowInContextName", "changeFlowOutContextName"):
                pool = _distinct(context_names, current)
            elif spec.id == "changeIntentName":
                pool = [n for n in dict.fromkeys(it.name for it in model.intents) if n and n != current]
            elif spec.id == "changeParameterName":
                siblings = model.intents[el.key[1]].parameters
                pool = [n for n in dict.fromkeys(p.name for p in siblings) if n and n != current]
            elif spec.id == "changeSEntityName":
                pool = [n for n in dict.fromkeys(e.name for e in model.entities) if n and n != current]
            if not pool:
                continue
        yield _Candidate(el, loc, pool)


def enumerate_targets(
    model: ChatbotModel,
    op: str,
    seed: int = 0,
    finder: Finder | None = None,
) -> list[MutationDescriptor]:
    """One descriptor per applicable element of ``model`` for operator ``op``."""
    spec = get_operator(op)
    finder = finder or _default_finder()
    policy = RandomPolicy(seed)
    out: list[MutationDescriptor] = []
    for cand in _candidates(model, spec, finder):
        original = finder.read(model, cand.loc)
        ordinal = len(out)
        subseed = 0
        companions: tuple[str, ...] = ()
        t = spec.transform
        if t is Transform.REMOVE:
            if original is ABSENT:
                continue
            mutated = ABSENT
            if cand.loc.pointer == "":
                companions = finder.companions(model, cand.element.key)
        elif t is Transform.TOGGLE:
            mutated = not bool(original) if original is not ABSENT else True
        elif t is Transform.REPLACE_WITH_EXISTING:
            if len(cand.pool) == 1:
                mutated = cand.pool[0]
            else:
                subseed = policy.subseed(spec.id, ordinal)
                mutated = policy.draw_choice(subseed, cand.pool)
        elif t is Transform.RANDOM_INT:
            effective = original
            if original is ABSENT:
                effective = model.default_lifespan if spec.prop == "lifespan" else DEFAULT_PRIORITY
            subseed = policy.subseed(spec.id, ordinal)
            mutated = policy.draw_int(subseed, *spec.int_range, effective)
        else:
            subseed = policy.subseed(spec.id, ordinal)
            mutated = policy.draw_string(subseed, original)
        out.append(MutationDescriptor(
            mutant_id=f"{spec.id}__{_stem(cand.loc.file)}__{ordinal}",
            operator=spec.id,
            target=cand.loc,
            original_value=original,
            mutated_value=mutated,
            seed=subseed,
            companions=companions,
        ))
    return out


def apply(
    model: ChatbotModel,
    d: MutationDescriptor,
    finder: Finder | None = None,
) -> tuple[ChatbotModel, frozenset[str]]:
    """Actuate ``d`` on a copy of ``model``; return the mutant and its dirty files."""
    finder = finder or _default_finder()
    get_operator(d.operator)
    current = finder.read(model, d.target)
    if current != d.original_value or type(current) is not type(d.original_value):
        raise StaleDescriptor(f"{d.mutant_id}: {d.target} holds {current!r}, expected {d.original_value!r}")
    if d.mutated_value == d.original_value and type(d.mutated_value) is type(d.original_value):
        raise SelfReplacement(d.mutant_id)
    edits = [Edit(d.target, d.mutated_value)]
    edits += [Edit(Loc(f), ABSENT) for f in d.companions]
    return finder.apply_edits(model, edits)


def _default_finder() -> Finder:
    from .dialogflow_io import FINDER

    return FINDER

"""Platform-agnostic chatbot meta-model.

A :class:`ChatbotModel` is a plain, immutable value: intents, entities,
languages and the conversational flows induced by contexts. Platform
adapters attach an opaque ``source_map`` that maps structural element
keys (tuples such as ``("parameter", 1, 0)``) to document locations; it
never takes part in equality.
"""

from __future__ import annotations

import abc
import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping

DEFAULT_PRIORITY = 500_000
MAX_PRIORITY = 1_000_000
DEFAULT_LIFESPAN = 5


class EntityKind(str, enum.Enum):
    SIMPLE = "Simple"
    COMPLEX = "Complex"
    REGEX = "Regex"


class ActionKind(str, enum.Enum):
    TEXT = "Text"
    IMAGE = "Image"
    HTTP_REQUEST = "HTTPRequest"
    HTTP_RESPONSE = "HTTPResponse"
    EMPTY = "Empty"


@dataclass(frozen=True, order=True)
class Loc:
    """A file-relative path plus a JSON pointer into that file's document.

    An empty pointer designates the whole file.
    """

    file: str
    pointer: str = ""

    def __str__(self) -> str:
        return f"{self.file}#{self.pointer}"

    def child(self, *tokens: str | int) -> Loc:
        escaped = [str(t).replace("~", "~0").replace("/", "~1") for t in tokens]
        return Loc(self.file, self.pointer + "".join("/" + t for t in escaped))

    def contains(self, other: Loc) -> bool:
        return self.file == other.file and (
            other.pointer == self.pointer or other.pointer.startswith(self.pointer + "/")
        )

    @classmethod
    def parse(cls, text: str) -> Loc:
        file, _, pointer = text.partition("#")
        return cls(file, pointer)


@dataclass(frozen=True)
class PhrasePart:
    text: str
    alias: str | None = None
    entity_ref: str | None = None


@dataclass(frozen=True)
class TrainingPhrase:
    parts: tuple[PhrasePart, ...]
    language: str

    @property
    def text(self) -> str:
        return "".join(p.text for p in self.parts)


@dataclass(frozen=True)
class OutputContext:
    name: str
    lifespan: int = DEFAULT_LIFESPAN
    parameters: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Parameter:
    name: str
    data_type: str = ""
    value_expr: str = ""
    is_required: bool | None = None
    is_list: bool | None = None
    prompts: Mapping[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    text_variants: tuple[str, ...] = ()
    raw_payload: Any = None


@dataclass(frozen=True)
class Intent:
    name: str
    priority: int = DEFAULT_PRIORITY
    # None means the flag is absent from the source, which is not the same as False
    is_fallback: bool | None = None
    input_contexts: tuple[str, ...] = ()
    output_contexts: tuple[OutputContext, ...] = ()
    parameters: tuple[Parameter, ...] = ()
    training_phrases: Mapping[str, tuple[TrainingPhrase, ...]] = field(default_factory=dict)
    responses: Mapping[str, tuple[Action, ...]] = field(default_factory=dict)

    @property
    def fallback(self) -> bool:
        return bool(self.is_fallback)


@dataclass(frozen=True)
class EntityEntry:
    value: str
    synonyms: tuple[str, ...] = ()


@dataclass(frozen=True)
class EntityDef:
    name: str
    kind: EntityKind = EntityKind.SIMPLE
    entries: Mapping[str, tuple[EntityEntry, ...]] = field(default_factory=dict)
    raw_payload: Any = None

    def all_entries(self) -> Iterator[EntityEntry]:
        for lang in self.entries:
            yield from self.entries[lang]


@dataclass(frozen=True)
class Flow:
    """Edge induced by an output context of one intent feeding another's input."""

    producer: int
    output: int
    context: str
    consumers: tuple[int, ...]


@dataclass(frozen=True)
class ChatbotModel:
    name: str
    default_language: str
    supported_languages: tuple[str, ...]
    intents: tuple[Intent, ...] = ()
    entities: tuple[EntityDef, ...] = ()
    default_lifespan: int = DEFAULT_LIFESPAN
    source_map: Any = field(default=None, compare=False, repr=False)

    def intent(self, name: str) -> Intent:
        for it in self.intents:
            if it.name == name:
                return it
        raise KeyError(name)

    def entity(self, name: str) -> EntityDef | None:
        for ent in self.entities:
            if ent.name and ent.name == name:
                return ent
        return None

    def flows(self) -> list[Flow]:
        consumers: dict[str, list[int]] = {}
        for i, it in enumerate(self.intents):
            for ctx in it.input_contexts:
                if ctx:
                    consumers.setdefault(ctx.casefold(), []).append(i)
        out = []
        for i, it in enumerate(self.intents):
            for j, oc in enumerate(it.output_contexts):
                users = consumers.get(oc.name.casefold()) if oc.name else None
                if users:
                    out.append(Flow(i, j, oc.name, tuple(dict.fromkeys(users))))
        return out

    def locate(self, key: tuple) -> Loc | None:
        if self.source_map is None:
            return None
        return self.source_map.locations.get(key)


def same_language(a: str, b: str) -> bool:
    return a.casefold() == b.casefold()


class _Absent(enum.Enum):
    ABSENT = "ABSENT"

    def __repr__(self) -> str:
        return "ABSENT"


#: Marker for a property missing from its document (distinct from null/false).
ABSENT = _Absent.ABSENT


@dataclass(frozen=True)
class Edit:
    """Set ``value`` at ``loc``, or delete what is there when ``value`` is ABSENT."""

    loc: Loc
    value: Any = ABSENT


class Finder(abc.ABC):
    """Platform-specific half of element lookup and change actuation.

    The meta-model names elements by structural key; a finder knows where
    each one lives in the platform's files and how to rewrite them.
    """

    @abc.abstractmethod
    def property_loc(self, model: ChatbotModel, key: tuple, prop: str) -> Loc:
        """Location of property ``prop`` of the element ``key``."""

    @abc.abstractmethod
    def read(self, model: ChatbotModel, loc: Loc) -> Any:
        """Current value at ``loc``; ABSENT when the location does not exist."""

    @abc.abstractmethod
    def companions(self, model: ChatbotModel, key: tuple) -> tuple[str, ...]:
        """Files that must disappear together with element ``key``."""

    @abc.abstractmethod
    def apply_edits(self, model: ChatbotModel, edits: list[Edit]) -> tuple[ChatbotModel, frozenset[str]]:
        """Return a modified copy of ``model`` and the set of files touched."""


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    loc: Loc | None
    message: str


def validate(model: ChatbotModel) -> list[Violation]:
    """Report every meta-model invariant the model breaks.

    Never raises; mutants are expected to produce violations.
    """
    out: list[Violation] = []

    def add(kind: str, key: tuple | None, message: str) -> None:
        out.append(Violation(kind, model.locate(key) if key else None, message))

    if not model.supported_languages:
        add("NoSupportedLanguages", ("language", 0), "no supported languages")
    elif not any(same_language(model.default_language, l) for l in model.supported_languages):
        add("DefaultLanguageNotSupported", ("language", 0), model.default_language)

    for name, n in Counter(it.name for it in model.intents).items():
        if n > 1:
            idx = [i for i, it in enumerate(model.intents) if it.name == name]
            add("DuplicateIntentName", ("intent", idx[1]), f"{name!r} defined {n} times")
    for name, n in Counter(e.name for e in model.entities).items():
        if n > 1:
            idx = [i for i, e in enumerate(model.entities) if e.name == name]
            add("DuplicateEntityName", ("entity", idx[1]), f"{name!r} defined {n} times")

    for i, it in enumerate(model.intents):
        if not it.name:
            add("EmptyIntentName", ("intent", i), "intent without a name")
        if not isinstance(it.priority, int) or not 0 <= it.priority <= MAX_PRIORITY:
            add("PriorityOutOfRange", ("intent", i), f"{it.name}: priority {it.priority!r}")
        for j, ctx in enumerate(it.input_contexts):
            if not ctx:
                add("EmptyContextName", ("input_context", i, j), f"{it.name}: empty input context")
        for j, oc in enumerate(it.output_contexts):
            if not oc.name:
                add("EmptyContextName", ("output_context", i, j), f"{it.name}: empty output context")
            if not isinstance(oc.lifespan, int) or oc.lifespan < 0:
                add("NegativeLifespan", ("output_context", i, j), f"{it.name}: lifespan {oc.lifespan!r}")
        seen: set[str] = set()
        for j, p in enumerate(it.parameters):
            if not p.name:
                add("EmptyParameterName", ("parameter", i, j), f"{it.name}: parameter #{j} has no name")
            elif p.name in seen:
                add("DuplicateParameterName", ("parameter", i, j), f"{it.name}: {p.name!r}")
            seen.add(p.name)
            if not p.is_required and any(p.prompts.values()):
                add("PromptsOnOptionalParameter", ("parameter", i, j), f"{it.name}: {p.name!r}")
        declared = {p.name for p in it.parameters if p.name}
        for lang, phrases in it.training_phrases.items():
            for k, ph in enumerate(phrases):
                if not ph.parts:
                    add("EmptyTrainingPhrase", ("phrase", i, lang, k), f"{it.name}: empty phrase")
                for part in ph.parts:
                    if part.alias and not part.entity_ref:
                        add("AliasWithoutEntity", ("phrase", i, lang, k), f"{it.name}: {part.alias!r}")
                    if part.alias and part.alias not in declared:
                        add("DanglingAlias", ("phrase", i, lang, k), f"{it.name}: {part.alias!r}")
        for lang, actions in it.responses.items():
            for a, act in enumerate(actions):
                if act.kind is ActionKind.TEXT and not act.text_variants:
                    add("EmptyTextAction", ("action", i, lang, a), f"{it.name}: text action without variants")

    for e, ent in enumerate(model.entities):
        if not ent.name:
            add("EmptyEntityName", ("entity", e), "entity without a name")
        if ent.kind is not EntityKind.SIMPLE:
            continue
        if not any(True for _ in ent.all_entries()):
            add("EntityWithoutEntries", ("entity", e), ent.name)
        for lang, entries in ent.entries.items():
            for k, entry in enumerate(entries):
                if not entry.synonyms:
                    add("EntryWithoutSynonyms", ("entry", e, lang, k), f"{ent.name}: {entry.value!r}")
    return out


# -- element index ------------------------------------------------------------

CATEGORIES = (
    "languages",
    "intents",
    "entities",
    "flows",
    "input_contexts",
    "output_contexts",
    "context_parameters",
    "parameters",
    "prompts",
    "entries",
    "synonyms",
    "text_variants",
)


@dataclass(frozen=True)
class Element:
    category: str
    key: tuple
    loc: Loc | None
    label: str


@dataclass(frozen=True)
class ElementIndex:
    categories: Mapping[str, tuple[Element, ...]]

    def __getitem__(self, category: str) -> tuple[Element, ...]:
        return self.categories[category]

    def counts(self) -> dict[str, int]:
        return {c: len(v) for c, v in self.categories.items()}

    def __iter__(self) -> Iterator[Element]:
        for c in CATEGORIES:
            yield from self.categories[c]


def element_index(model: ChatbotModel) -> ElementIndex:
    """Enumerate the addressable elements of ``model`` per category.

    Order follows the model, which adapters build in file order and then
    in-document order, so it is deterministic.
    """
    cats: dict[str, list[Element]] = {c: [] for c in CATEGORIES}

    def add(cat: str, key: tuple, label: str) -> None:
        cats[cat].append(Element(cat, key, model.locate(key), label))

    for k, lang in enumerate(model.supported_languages):
        add("languages", ("language", k), lang)
    for i, it in enumerate(model.intents):
        add("intents", ("intent", i), it.name)
    for e, ent in enumerate(model.entities):
        add("entities", ("entity", e), ent.name)
    for fl in model.flows():
        consumers = ",".join(model.intents[c].name for c in fl.consumers)
        add("flows", ("output_context", fl.producer, fl.output),
            f"{model.intents[fl.producer].name} -[{fl.context}]-> {consumers}")
    for i, it in enumerate(model.intents):
        for j, ctx in enumerate(it.input_contexts):
            add("input_contexts", ("input_context", i, j), f"{it.name}<{ctx}")
        for j, oc in enumerate(it.output_contexts):
            add("output_contexts", ("output_context", i, j), f"{it.name}>{oc.name}")
            for key, _ in oc.parameters:
                add("context_parameters", ("context_parameter", i, j, key), f"{oc.name}.{key}")
        for j, p in enumerate(it.parameters):
            add("parameters", ("parameter", i, j), f"{it.name}.{p.name}")
            for lang, prompts in p.prompts.items():
                for k, _ in enumerate(prompts):
                    add("prompts", ("prompt", i, j, lang, k), f"{it.name}.{p.name}[{lang}#{k}]")
        for lang, actions in it.responses.items():
            for a, act in enumerate(actions):
                for v, _ in enumerate(act.text_variants):
                    add("text_variants", ("text_variant", i, lang, a, v), f"{it.name}[{lang}#{a}.{v}]")
    for e, ent in enumerate(model.entities):
        for lang, entries in ent.entries.items():
            for k, entry in enumerate(entries):
                add("entries", ("entry", e, lang, k), f"{ent.name}:{entry.value}")
                for s, syn in enumerate(entry.synonyms):
                    add("synonyms", ("synonym", e, lang, k, s), f"{ent.name}:{entry.value}~{syn}")
    return ElementIndex({c: tuple(v) for c, v in cats.items()})

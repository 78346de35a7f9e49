from __future__ import annotations

import json
from dataclasses import replace

import pytest

from chatmut.dialogflow_io import load_agent
from chatmut.metamodel import (
    ABSENT,
    CATEGORIES,
    ChatbotModel,
    EntityDef,
    EntityEntry,
    Intent,
    Loc,
    OutputContext,
    Parameter,
    PhrasePart,
    TrainingPhrase,
    element_index,
    validate,
)
from helpers import AGENTS, CORPUS, FIXTURES


@pytest.fixture(scope="module")
def hotel():
    return load_agent(AGENTS / "hotel")


@pytest.fixture(scope="module")
def manifest():
    return json.loads((FIXTURES / "hotel_manifest.json").read_text())


def kinds(model):
    return sorted(v.kind for v in validate(model))


@pytest.mark.parametrize("agent", CORPUS)
def test_corpus_agents_are_valid(agent):
    assert validate(load_agent(AGENTS / agent)) == []


def test_three_intent_model_is_valid():
    m = ChatbotModel("x", "en", ("en",), (Intent("A"), Intent("B"), Intent("C")))
    assert validate(m) == []


@pytest.mark.parametrize("mutate, expected", [
    (lambda m: replace(m, supported_languages=()), ["NoSupportedLanguages"]),
    (lambda m: replace(m, default_language="fr"), ["DefaultLanguageNotSupported"]),
    (lambda m: replace(m, intents=m.intents + (Intent("A"),)), ["DuplicateIntentName"]),
    (lambda m: replace(m, intents=(Intent(""),)), ["EmptyIntentName"]),
    (lambda m: replace(m, intents=(Intent("A", priority=1_000_001),)), ["PriorityOutOfRange"]),
    (lambda m: replace(m, intents=(Intent("A", input_contexts=("",)),)), ["EmptyContextName"]),
    (lambda m: replace(m, intents=(Intent("A", output_contexts=(OutputContext("c", -1),)),)), ["NegativeLifespan"]),
    (lambda m: replace(m, intents=(Intent("A", parameters=(Parameter(""),)),)), ["EmptyParameterName"]),
    (lambda m: replace(m, intents=(Intent("A", parameters=(Parameter("p"), Parameter("p"))),)),
     ["DuplicateParameterName"]),
    (lambda m: replace(m, intents=(Intent("A", parameters=(Parameter("p", is_required=False,
                                                                      prompts={"en": ("?",)}),)),)),
     ["PromptsOnOptionalParameter"]),
    (lambda m: replace(m, intents=(Intent("A", training_phrases={"en": (TrainingPhrase((), "en"),)}),)),
     ["EmptyTrainingPhrase"]),
    (lambda m: replace(m, intents=(Intent("A", training_phrases={
        "en": (TrainingPhrase((PhrasePart("x", "p", "@e"),), "en"),)}),)), ["DanglingAlias"]),
    (lambda m: replace(m, entities=(EntityDef("e"),)), ["EntityWithoutEntries"]),
    (lambda m: replace(m, entities=(EntityDef("e", entries={"en": (EntityEntry("v"),)}),)),
     ["EntryWithoutSynonyms"]),
    (lambda m: replace(m, entities=(EntityDef("", entries={"en": (EntityEntry("v", ("v",)),)}),)),
     ["EmptyEntityName"]),
])
def test_validate_reports_each_violation(mutate, expected):
    base = ChatbotModel("x", "en", ("en",), (Intent("A"),))
    assert kinds(mutate(base)) == expected


def test_validate_never_raises_on_odd_values():
    m = ChatbotModel("x", "en", ("en",), (Intent("A", priority="high"),))
    assert kinds(m) == ["PriorityOutOfRange"]


def test_violation_points_at_source(hotel):
    bad = replace(hotel, intents=(replace(hotel.intents[0], priority=-1),) + hotel.intents[1:])
    bad = replace(bad, source_map=hotel.source_map)
    (v,) = validate(bad)
    assert v.loc == Loc("intents/BookRoom.json", "")


def test_element_counts_match_hand_manifest(hotel, manifest):
    counts = element_index(hotel).counts()
    assert counts == {
        "languages": len(manifest["languages"]),
        "intents": len(manifest["intents"]),
        "entities": len(manifest["simple_entities"]),
        "flows": len(manifest["flows"]),
        "input_contexts": sum(map(len, manifest["input_contexts"].values())),
        "output_contexts": sum(map(len, manifest["output_contexts"].values())),
        "context_parameters": sum(map(len, manifest["output_context_parameters"].values())),
        "parameters": sum(map(len, manifest["parameters_per_intent"].values())),
        "prompts": sum(manifest["prompts"].values()),
        "entries": sum(len(e) for e in manifest["entries"].values()),
        "synonyms": sum(len(s) for e in manifest["entries"].values() for s in e.values()),
        "text_variants": sum(manifest["text_variants"].values()),
    }


def test_flows_match_manifest(hotel, manifest):
    got = [[hotel.intents[f.producer].name, f.context, [hotel.intents[c].name for c in f.consumers]]
           for f in hotel.flows()]
    assert sorted(got) == sorted(manifest["flows"])


def test_device_indexes_eleven_intents_and_two_entities():
    counts = element_index(load_agent(AGENTS / "device")).counts()
    assert (counts["intents"], counts["entities"]) == (11, 2)


@pytest.mark.parametrize("agent", CORPUS)
def test_every_element_is_in_exactly_one_category(agent):
    index = element_index(load_agent(AGENTS / agent))
    seen: dict[tuple, str] = {}
    for cat in CATEGORIES:
        if cat == "flows":
            continue  # a flow is a view over an output context, indexed twice on purpose
        for el in index[cat]:
            assert el.key not in seen, (el.key, seen.get(el.key), cat)
            seen[el.key] = cat
            assert el.loc is not None


@pytest.mark.parametrize("agent", CORPUS)
def test_index_order_is_deterministic(agent):
    a = list(element_index(load_agent(AGENTS / agent)))
    b = list(element_index(load_agent(AGENTS / agent)))
    assert a == b


def test_loc_parse_and_containment():
    loc = Loc.parse("intents/A.json#/responses/0")
    assert loc == Loc("intents/A.json", "/responses/0")
    assert str(loc) == "intents/A.json#/responses/0"
    assert Loc("intents/A.json").contains(loc)
    assert loc.contains(loc.child("parameters", 1))
    assert not loc.contains(Loc("intents/A.json", "/responses/01"))
    assert loc.child("a/b") == Loc("intents/A.json", "/responses/0/a~1b")


def test_absent_is_a_singleton_distinct_from_none():
    assert ABSENT is not None and not ABSENT == False  # noqa: E712
    assert repr(ABSENT) == "ABSENT"

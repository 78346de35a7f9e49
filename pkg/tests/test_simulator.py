from __future__ import annotations

from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chatmut.dialogflow_io import load_agent
from chatmut.metamodel import (
    Action,
    ActionKind,
    ChatbotModel,
    EntityDef,
    EntityEntry,
    Intent,
    OutputContext,
    Parameter,
    PhrasePart,
    TrainingPhrase,
)
from chatmut.operators import apply, enumerate_targets
from chatmut.simulator import (
    Bot,
    ConversationState,
    ConvoScript,
    Me,
    ProbeVerdict,
    Simulator,
    Verdict,
    equivalence_probe,
    load_suite,
    match_intent,
    normalize,
    parse_convo,
    probe_alphabet,
    run_convo,
    step,
)
from chatmut.errors import ConvoParseError
from helpers import AGENTS, SUITES


def phrase(*parts, lang="en"):
    out = []
    for p in parts:
        if isinstance(p, tuple):
            text, alias, ref = p
            out.append(PhrasePart(text, alias, ref))
        else:
            out.append(PhrasePart(p))
    return TrainingPhrase(tuple(out), lang)


def text(*variants):
    return Action(ActionKind.TEXT, tuple(variants))


def model(*intents, entities=(), languages=("en",)):
    return ChatbotModel("Inline", languages[0], tuple(languages), tuple(intents), tuple(entities))


FALLBACK = Intent("Fallback", is_fallback=True, responses={"en": (text("Sorry?"),)})


@pytest.fixture(scope="module")
def hotel():
    return load_agent(AGENTS / "hotel")


@pytest.fixture(scope="module")
def hotel_suite():
    return {s.name: s for s in load_suite(SUITES / "hotel")}


# -- matching -------------------------------------------------------------------


def test_normalize_casefolds_trims_and_collapses():
    assert normalize("  Hello \t  World ") == "hello world"


def test_hello_matches_greet_without_fallback(hotel):
    r = match_intent(hotel, ConversationState(), "hello")
    assert r.matched_intent == "Greet"
    assert not r.used_fallback


def test_synonym_is_canonicalised_to_entry_value():
    city = EntityDef("city", entries={"en": (EntityEntry("Tokyo", ("tokyo", "tyo")),)})
    book = Intent("Book", training_phrases={"en": (phrase("book ", ("Paris", "city", "@city")),)})
    m = model(book, FALLBACK, entities=(city,))
    r = match_intent(m, ConversationState(), "book tokyo")
    assert r.matched_intent == "Book"
    assert r.extracted_params == {"city": "Tokyo"}
    assert match_intent(m, ConversationState(), "Book  TYO").extracted_params == {"city": "Tokyo"}


def test_higher_priority_wins():
    hi = Intent("High", priority=900_000, training_phrases={"en": (phrase("hello"),)})
    lo = Intent("Low", priority=500_000, training_phrases={"en": (phrase("hello"),)})
    for order in ((lo, hi), (hi, lo)):
        assert match_intent(model(*order), ConversationState(), "hello").matched_intent == "High"


def test_equal_priority_breaks_ties_by_name():
    b = Intent("Beta", training_phrases={"en": (phrase("hello"),)})
    a = Intent("Alpha", training_phrases={"en": (phrase("hello"),)})
    assert match_intent(model(b, a), ConversationState(), "hello").matched_intent == "Alpha"


def test_unmatched_utterance_goes_to_fallback(hotel):
    r = match_intent(hotel, ConversationState(), "what is the weather")
    assert r.used_fallback
    assert r.matched_intent == "Default Fallback Intent"


def test_no_fallback_means_no_match_and_no_response():
    m = model(Intent("Greet", training_phrases={"en": (phrase("hi"),)}, responses={"en": (text("Hi"),)}))
    state, responses = step(m, ConversationState(), "bye")
    assert responses == []
    assert state.turn_counter == 1


def test_input_context_gates_intent(hotel):
    assert match_intent(hotel, ConversationState(), "book a double room").used_fallback
    state, _ = step(hotel, ConversationState(), "hello")
    assert match_intent(hotel, state, "book a double room").matched_intent == "BookRoom"


# -- step -----------------------------------------------------------------------


def test_output_context_lifespan_eviction(hotel):
    state, _ = step(hotel, ConversationState(), "hello")
    assert state.active_contexts == {"greeted": 5}
    for remaining in (4, 3, 2, 1):
        state, _ = step(hotel, state, "what is the weather")
        assert state.active_contexts == {"greeted": remaining}
    state, _ = step(hotel, state, "what is the weather")
    assert state.active_contexts == {}


def test_reactivation_refreshes_lifespan(hotel):
    state, _ = step(hotel, ConversationState(), "hello")
    state, _ = step(hotel, state, "nonsense")
    state, _ = step(hotel, state, "hi")
    assert state.active_contexts == {"greeted": 5}


def test_missing_required_parameter_prompts_and_sets_pending_slot():
    it = Intent(
        "Book",
        training_phrases={"en": (phrase("book"),)},
        parameters=(Parameter("date", "@sys.date", "$date", True, prompts={"en": ("When?",)}),),
        responses={"en": (text("Booked for $date"),)},
    )
    m = model(it, FALLBACK)
    state, responses = step(m, ConversationState(), "book")
    assert responses == ["When?"]
    assert state.pending_slot == (0, 0)
    state, responses = step(m, state, "friday")
    assert responses == ["Booked for friday"]
    assert state.pending_slot is None


def test_simple_entity_slot_rejects_unknown_value(hotel):
    state, _ = step(hotel, ConversationState(), "hello")
    state, responses = step(hotel, state, "I need a room")
    assert responses == ["When would you like to arrive?"]
    state, responses = step(hotel, state, "tomorrow")
    assert responses == ["Single or double?"]
    state, responses = step(hotel, state, "penthouse")
    assert responses == ["Single or double?"]
    state, responses = step(hotel, state, "two beds")
    assert responses == ["Booked a double room for tomorrow."]


def test_parameter_substitution():
    it = Intent(
        "Room",
        training_phrases={"en": (phrase("room ", ("7", "room", "@sys.number")),)},
        parameters=(Parameter("room", "@sys.number", "$room"),),
        responses={"en": (text("Booked $room", "Other"),)},
    )
    assert step(model(it), ConversationState(), "room 101")[1] == ["Booked 101"]


def test_unresolved_reference_left_verbatim():
    it = Intent("Echo", training_phrases={"en": (phrase("echo"),)}, responses={"en": (text("Value $missing"),)})
    assert step(model(it), ConversationState(), "echo")[1] == ["Value $missing"]


def test_context_parameters_reach_later_responses(hotel):
    state = ConversationState()
    for utt in ("hello", "book a double room for monday"):
        state, _ = step(hotel, state, utt)
    state, responses = step(hotel, state, "yes")
    assert responses == ["Confirmed: a double room on monday."]


def test_zero_lifespan_output_context_removes_context():
    set_ctx = Intent("Set", training_phrases={"en": (phrase("on"),)}, output_contexts=(OutputContext("c", 3),))
    clear = Intent("Clear", training_phrases={"en": (phrase("off"),)}, output_contexts=(OutputContext("c", 0),))
    m = model(set_ctx, clear)
    state, _ = step(m, ConversationState(), "on")
    state, _ = step(m, state, "off")
    assert state.active_contexts == {}


def test_webhook_intent_yields_placeholder():
    m = load_agent(AGENTS / "appointment")
    _, responses = step(m, ConversationState(), "book a trim on friday at 3 pm")
    assert responses == ["You are all set for friday at 3 pm.", "[webhook]"]


def test_script_language_selects_responses(hotel):
    _, responses = step(hotel, ConversationState(), "hola", "es")
    assert responses == ["¡Hola! ¿En qué puedo ayudarle?"]


# -- convo scripts ----------------------------------------------------------------


def test_parse_convo_round_trips_through_text():
    text_ = "demo\n\n#lang es\n\n#me\nhola\n\n#bot\nA\nB\n\n#bot contains\nC\n"
    script = parse_convo(text_)
    assert script == ConvoScript("demo", (Me("hola"), Bot(("A", "B")), Bot(("C",), True)), "es")
    assert parse_convo(script.to_text()) == script


@pytest.mark.parametrize("bad", [
    "",
    "name\n\n#bot\nHi",
    "name\n\n#me\nhi\n\n#bot",
    "name\n\n#shout\nhi",
    "name\n\n#me\nhi\n\n#bot contains\na\nb",
])
def test_parse_convo_rejects_malformed(bad):
    with pytest.raises(ConvoParseError):
        parse_convo(bad)


def test_run_convo_pass_and_fail_on_changed_text():
    greet = Intent("Greet", training_phrases={"en": (phrase("hello"),)}, responses={"en": (text("Hi!"),)})
    script = ConvoScript("greet", (Me("hello"), Bot(("Hi!",))))
    assert run_convo(model(greet), script).verdict is Verdict.PASS

    mutated = Intent("Greet", training_phrases={"en": (phrase("hello"),)},
                     responses={"en": (text("qwertyuiopas"),)})
    outcome = run_convo(model(mutated), script)
    assert outcome.verdict is Verdict.FAIL
    assert outcome.failing_turn == 1
    assert outcome.actual == "qwertyuiopas"


def test_missing_bot_message_fails():
    script = ConvoScript("s", (Me("nothing"), Bot(("x",))))
    outcome = run_convo(model(Intent("A")), script)
    assert not outcome.passed and outcome.actual is None


def test_bundled_suite_passes_on_hotel(hotel, hotel_suite):
    assert all(run_convo(hotel, s).passed for s in hotel_suite.values())


def test_slot_filling_script_fails_on_required_toggle(hotel, hotel_suite):
    d = next(d for d in enumerate_targets(hotel, "toggleParameterIsRequired")
             if d.target.pointer.endswith("/parameters/0/required"))
    mutant, _ = apply(hotel, d)
    outcome = run_convo(mutant, hotel_suite["book_slot_filling"])
    assert outcome.verdict is Verdict.FAIL
    # turn 3 is the bot expectation holding the date prompt
    assert outcome.failing_turn == 3
    assert outcome.expected == "When would you like to arrive?"


# -- equivalence probe ------------------------------------------------------------------


def test_probe_identity_is_equivalent(hotel):
    assert equivalence_probe(hotel, hotel, 2).verdict is ProbeVerdict.LIKELY_EQUIVALENT


def test_probe_priority_without_competitor_is_equivalent(hotel):
    for d in enumerate_targets(hotel, "changeIntentPriority", seed=3):
        mutant, _ = apply(hotel, d)
        assert equivalence_probe(hotel, mutant, 3).verdict is ProbeVerdict.LIKELY_EQUIVALENT


def test_probe_removed_greet_gives_hello_witness(hotel):
    d = next(d for d in enumerate_targets(hotel, "removeChatbotIntent") if d.target.file == "intents/Greet.json")
    mutant, _ = apply(hotel, d)
    result = equivalence_probe(hotel, mutant, 3)
    assert result.verdict is ProbeVerdict.DISTINGUISHED
    assert [t.utterance for t in result.witness.turns if isinstance(t, Me)] == ["hello"]
    assert run_convo(hotel, result.witness).passed
    assert not run_convo(mutant, result.witness).passed


@pytest.mark.parametrize("depth", [0, 5])
def test_probe_depth_is_bounded(hotel, depth):
    with pytest.raises(ValueError):
        equivalence_probe(hotel, hotel, depth)


def test_probe_alphabet_is_capped():
    many = EntityDef("n", entries={"en": tuple(EntityEntry(f"v{k}", (f"v{k}",)) for k in range(300))})
    it = Intent("Pick", training_phrases={"en": (phrase("pick ", ("v0", "n", "@n")),)})
    alphabet, sampled = probe_alphabet(model(it, entities=(many,)))
    assert sampled and len(alphabet) == 200


# -- properties -------------------------------------------------------------------------

_hotel = load_agent(AGENTS / "hotel")
_alphabet, _ = probe_alphabet(_hotel)
_utterances = st.lists(st.sampled_from(_alphabet + ["gibberish", "penthouse"]), min_size=1, max_size=6)


@settings(max_examples=60, deadline=None)
@given(_utterances)
def test_run_is_deterministic(utts):
    script = ConvoScript("p", tuple(Me(u) for u in utts))
    a, b = Simulator(_hotel), Simulator(_hotel)
    assert a.run_convo(script) == b.run_convo(script)
    sa = sb = ConversationState()
    for u in utts:
        sa, ra = a.step(sa, u)
        sb, rb = b.step(sb, u)
        assert ra == rb and sa.signature() == sb.signature()


@settings(max_examples=60, deadline=None)
@given(_utterances)
def test_fallback_totality(utts):
    sim, state = Simulator(_hotel), ConversationState()
    for u in utts:
        pending = state.pending_slot
        state, responses = sim.step(state, u)
        # slot answers always re-prompt or complete; free turns reach some intent
        assert responses or pending is not None


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["hello", "hi", "good morning"]), st.integers(min_value=0, max_value=8))
def test_context_monotonicity(greeting, idle_turns):
    sim = Simulator(_hotel)
    state, _ = sim.step(ConversationState(), greeting)
    for _ in range(idle_turns):
        state, _ = sim.step(state, "gibberish")
    assert ("greeted" in state.active_contexts) == (idle_turns < 5)


def test_probe_depth_bounds_what_it_can_see(hotel):
    # booking lifespan 2 -> 1 is only observable after greet, book, an idle turn, confirm
    d = next(d for d in enumerate_targets(hotel, "changeFlowOutContextLifespan") if d.original_value == 2)
    mutant, _ = apply(hotel, replace(d, mutated_value=1))
    assert equivalence_probe(hotel, mutant, 3).verdict is ProbeVerdict.LIKELY_EQUIVALENT
    result = equivalence_probe(hotel, mutant, 4)
    assert result.verdict is ProbeVerdict.DISTINGUISHED
    assert len([t for t in result.witness.turns if isinstance(t, Me)]) == 4


def test_probe_explores_secondary_languages(hotel):
    d = next(d for d in enumerate_targets(hotel, "changeTActionValue") if d.original_value.startswith("¡Hola"))
    mutant, _ = apply(hotel, d)
    result = equivalence_probe(hotel, mutant, 1)
    assert result.verdict is ProbeVerdict.DISTINGUISHED
    assert result.witness.language == "es"

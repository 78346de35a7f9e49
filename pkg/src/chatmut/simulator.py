"""Rule-based conversation simulator and convo-script runner.

Stands in for a live NLU service plus a scripted test runner so that
mutants can be executed offline and deterministically. Matching is exact
after normalization; entity-typed phrase parts act as wildcards.
"""

from __future__ import annotations

import enum
import re
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConvoParseError
from .metamodel import ActionKind, ChatbotModel, EntityKind, Intent, same_language

WEBHOOK_PLACEHOLDER = "[webhook]"
MAX_PROBE_DEPTH = 4
ALPHABET_CAP = 200

_PARAM_REF = re.compile(r"\$([\w-]+)")
_CONTEXT_REF = re.compile(r"#([\w-]+)\.([\w-]+)")


def normalize(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass
class ConversationState:
    active_contexts: dict[str, int] = field(default_factory=dict)
    context_params: dict[str, dict[str, str]] = field(default_factory=dict)
    # (intent index, parameter index) awaiting a value
    pending_slot: tuple[int, int] | None = None
    collected_params: dict[str, str] = field(default_factory=dict)
    turn_counter: int = 0

    def copy(self) -> ConversationState:
        return ConversationState(
            dict(self.active_contexts),
            {k: dict(v) for k, v in self.context_params.items()},
            self.pending_slot,
            dict(self.collected_params),
            self.turn_counter,
        )

    def signature(self) -> tuple:
        """Behaviour-relevant state; the turn counter is excluded."""
        return (
            tuple(sorted(self.active_contexts.items())),
            tuple(sorted((k, tuple(sorted(v.items()))) for k, v in self.context_params.items())),
            self.pending_slot,
            tuple(sorted(self.collected_params.items())),
        )


@dataclass(frozen=True)
class MatchResult:
    matched_intent: str | None = None
    intent_index: int | None = None
    extracted_params: dict[str, str] = field(default_factory=dict)
    used_fallback: bool = False
    response_texts: tuple[str, ...] = ()
    activated_contexts: tuple[tuple[str, int], ...] = ()


@dataclass
class _EntityMatcher:
    pattern: str | None  # None: the type cannot match anything
    canonical: dict[str, str] = field(default_factory=dict)


@dataclass
class _CompiledPhrase:
    intent: int
    regex: re.Pattern
    slots: list[tuple[str | None, _EntityMatcher]]


class Simulator:
    """Compiled view of one model; cheap to query repeatedly."""

    def __init__(self, model: ChatbotModel):
        self.model = model
        self._entity_cache: dict[str, _EntityMatcher] = {}
        self.phrases: list[_CompiledPhrase] = []
        languages = [l.casefold() for l in model.supported_languages]
        for i, it in enumerate(model.intents):
            if it.fallback:
                continue
            for lang, phrases in it.training_phrases.items():
                if lang.casefold() not in languages:
                    continue
                for ph in phrases:
                    compiled = self._compile(i, ph.parts)
                    if compiled is not None:
                        self.phrases.append(compiled)

    # -- entities -------------------------------------------------------------

    def entity_matcher(self, ref: str | None) -> _EntityMatcher:
        if not ref:
            return _EntityMatcher(r".+?")
        if ref not in self._entity_cache:
            self._entity_cache[ref] = self._build_entity_matcher(ref)
        return self._entity_cache[ref]

    def _build_entity_matcher(self, ref: str) -> _EntityMatcher:
        name = ref[1:] if ref.startswith("@") else ref
        name = name.split(":", 1)[0]
        if name.startswith("sys."):
            return _EntityMatcher(r".+?")
        ent = self.model.entity(name)
        if ent is None:
            return _EntityMatcher(None)
        if ent.kind is EntityKind.COMPLEX:
            return _EntityMatcher(r".+?")
        if ent.kind is EntityKind.REGEX:
            patterns = [
                str(item.get("value", ""))
                for doc in (ent.raw_payload or {}).get("entries", {}).values()
                for item in (doc or [])
                if isinstance(item, dict)
            ]
            patterns = [p for p in patterns if _compiles(p)]
            if not patterns:
                return _EntityMatcher(None)
            return _EntityMatcher("|".join(f"(?:{p})" for p in patterns))
        canonical: dict[str, str] = {}
        for entry in ent.all_entries():
            for surface in (entry.value, *entry.synonyms):
                key = normalize(surface)
                if key and key not in canonical:
                    canonical[key] = entry.value
        if not canonical:
            return _EntityMatcher(None)
        alts = sorted(canonical, key=lambda s: (-len(s), s))
        return _EntityMatcher("|".join(re.escape(a) for a in alts), canonical)

    def _compile(self, intent: int, parts) -> _CompiledPhrase | None:
        chunks: list[tuple[str, object]] = []
        for part in parts:
            if part.entity_ref:
                chunks.append(("slot", part))
            elif chunks and chunks[-1][0] == "lit":
                chunks[-1] = ("lit", chunks[-1][1] + part.text)
            else:
                chunks.append(("lit", part.text))
        pattern = ""
        slots = []
        for n, (kind, payload) in enumerate(chunks):
            if kind == "lit":
                text = re.sub(r"\s+", " ", payload.casefold())
                if n == 0:
                    text = text.lstrip()
                if n == len(chunks) - 1:
                    text = text.rstrip()
                pattern += re.escape(text)
            else:
                matcher = self.entity_matcher(payload.entity_ref)
                if matcher.pattern is None:
                    return None
                pattern += f"(?P<s{len(slots)}>{matcher.pattern})"
                slots.append((payload.alias, matcher))
        if not pattern:
            return None
        return _CompiledPhrase(intent, re.compile(pattern, re.IGNORECASE), slots)

    # -- matching -------------------------------------------------------------

    def _contexts_ok(self, it: Intent, state: ConversationState) -> bool:
        active = {c.casefold() for c in state.active_contexts}
        return all(c.casefold() in active for c in it.input_contexts)

    def match_intent(self, state: ConversationState, utterance: str) -> MatchResult:
        text = normalize(utterance)
        best = None
        for ph in self.phrases:
            it = self.model.intents[ph.intent]
            if not self._contexts_ok(it, state):
                continue
            m = ph.regex.fullmatch(text)
            if m is None:
                continue
            rank = (-_priority(it), it.name, ph.intent)
            if best is not None and rank >= best[0]:
                continue
            params = {}
            for k, (alias, matcher) in enumerate(ph.slots):
                value = m.group(f"s{k}")
                if alias:
                    params[alias] = matcher.canonical.get(normalize(value), value)
            best = (rank, ph.intent, params)
        if best is not None:
            _, i, params = best
            return MatchResult(self.model.intents[i].name, i, params)
        fallbacks = [
            (-_priority(it), it.name, i)
            for i, it in enumerate(self.model.intents)
            if it.fallback and self._contexts_ok(it, state)
        ]
        if fallbacks:
            i = min(fallbacks)[2]
            return MatchResult(self.model.intents[i].name, i, {}, used_fallback=True)
        return MatchResult()

    # -- stepping -------------------------------------------------------------

    def _language(self, language: str | None) -> str:
        return language or self.model.default_language

    def _prompt(self, it: Intent, p_index: int, language: str | None) -> list[str]:
        prompts = _by_language(it.parameters[p_index].prompts, self._language(language))
        return [prompts[0]] if prompts else []

    def _fill_slot(self, it: Intent, p_index: int, utterance: str) -> str | None:
        text = normalize(utterance)
        if not text:
            return None
        matcher = self.entity_matcher(it.parameters[p_index].data_type or None)
        if matcher.pattern is None:
            return None
        if matcher.canonical:
            return matcher.canonical.get(text)
        if re.fullmatch(matcher.pattern, text, re.IGNORECASE):
            return text
        return None

    def _next_unfilled(self, it: Intent, collected: dict[str, str]) -> int | None:
        for j, p in enumerate(it.parameters):
            if p.is_required and not collected.get(p.name):
                return j
        return None

    def step(self, state: ConversationState, utterance: str,
             language: str | None = None) -> tuple[ConversationState, list[str]]:
        new, result = self.step_detailed(state, utterance, language)
        return new, list(result.response_texts)

    def step_detailed(self, state: ConversationState, utterance: str,
                      language: str | None = None) -> tuple[ConversationState, MatchResult]:
        """Like :meth:`step` but also reports which intent handled the turn."""
        new = state.copy()
        result = MatchResult()
        new.turn_counter += 1
        previous = set(new.active_contexts)
        activated: set[str] = set()
        responses: list[str] = []

        if new.pending_slot is not None:
            i, j = new.pending_slot
            it = self.model.intents[i]
            value = self._fill_slot(it, j, utterance)
            result = MatchResult(it.name, i, {})
            if value is None:
                responses = self._prompt(it, j, language)
            else:
                new.collected_params[it.parameters[j].name] = value
                responses = self._advance(new, i, language, activated)
        else:
            result = self.match_intent(new, utterance)
            if result.intent_index is not None:
                i = result.intent_index
                new.collected_params = self._bind(self.model.intents[i], result.extracted_params, new)
                responses = self._advance(new, i, language, activated)

        for name in previous - activated:
            if name not in new.active_contexts:
                continue
            new.active_contexts[name] -= 1
            if new.active_contexts[name] <= 0:
                del new.active_contexts[name]
                new.context_params.pop(name, None)
        result = replace(
            result,
            response_texts=tuple(responses),
            activated_contexts=tuple((n, new.active_contexts[n]) for n in sorted(activated)),
        )
        return new, result

    def _bind(self, it: Intent, extracted: dict[str, str], state: ConversationState) -> dict[str, str]:
        collected: dict[str, str] = {}
        for p in it.parameters:
            expr = p.value_expr
            value = None
            if expr.startswith("$"):
                value = extracted.get(expr[1:])
            elif expr.startswith("#"):
                m = _CONTEXT_REF.fullmatch(expr)
                if m:
                    value = self._context_value(state, m[1], m[2])
            elif expr:
                value = expr
            else:
                value = extracted.get(p.name)
            if value:
                collected[p.name] = value
        return collected

    def _context_value(self, state: ConversationState, ctx: str, key: str) -> str | None:
        for name, params in state.context_params.items():
            if name.casefold() == ctx.casefold() and key in params:
                return params[key]
        return None

    def _advance(self, state: ConversationState, i: int, language: str | None,
                 activated: set[str]) -> list[str]:
        it = self.model.intents[i]
        j = self._next_unfilled(it, state.collected_params)
        if j is not None:
            state.pending_slot = (i, j)
            return self._prompt(it, j, language)
        state.pending_slot = None
        out = []
        for action in _by_language(it.responses, self._language(language)):
            if action.kind is ActionKind.TEXT and action.text_variants:
                out.append(self._substitute(action.text_variants[0], state))
            elif action.kind is ActionKind.HTTP_REQUEST:
                out.append(WEBHOOK_PLACEHOLDER)
        for oc in it.output_contexts:
            if not oc.name:
                continue
            name = oc.name.casefold()
            if not isinstance(oc.lifespan, int) or oc.lifespan <= 0:
                state.active_contexts.pop(name, None)
                state.context_params.pop(name, None)
                continue
            state.active_contexts[name] = oc.lifespan
            state.context_params[name] = {
                k: _PARAM_REF.sub(lambda m: state.collected_params.get(m[1], m[0]), v)
                for k, v in oc.parameters
            }
            activated.add(name)
        # values now live in the output contexts; the next match rebinds
        state.collected_params = {}
        return out

    def _substitute(self, text: str, state: ConversationState) -> str:
        def ctx(m):
            value = self._context_value(state, m[1], m[2])
            return m[0] if value is None else value

        text = _CONTEXT_REF.sub(ctx, text)
        return _PARAM_REF.sub(lambda m: state.collected_params.get(m[1], m[0]), text)

    # -- scripts --------------------------------------------------------------

    def run_convo(self, script: ConvoScript) -> TestOutcome:
        state = ConversationState()
        queue: deque[str] = deque()
        for n, turn in enumerate(script.turns):
            if isinstance(turn, Me):
                state, responses = self.step(state, turn.utterance, script.language)
                queue.extend(responses)
                continue
            actual = queue.popleft() if queue else None
            if actual is None or not turn.accepts(actual):
                return TestOutcome(script.name, Verdict.FAIL, n, turn.describe(), actual)
        return TestOutcome(script.name, Verdict.PASS)


def _priority(it: Intent) -> int:
    return it.priority if isinstance(it.priority, int) else 0


def _by_language(mapping, language: str):
    for lang, values in mapping.items():
        if same_language(lang, language):
            return values
    return ()


def _compiles(pattern: str) -> bool:
    try:
        re.compile(pattern)
    except re.error:
        return False
    return bool(pattern)


# -- module-level API ---------------------------------------------------------


def match_intent(model: ChatbotModel, state: ConversationState, utterance: str) -> MatchResult:
    return Simulator(model).match_intent(state, utterance)


def step(model: ChatbotModel, state: ConversationState, utterance: str,
         language: str | None = None) -> tuple[ConversationState, list[str]]:
    return Simulator(model).step(state, utterance, language)


def run_convo(model: ChatbotModel, script: ConvoScript) -> TestOutcome:
    return Simulator(model).run_convo(script)


def run_suite(model: ChatbotModel, suite: Sequence[ConvoScript]) -> list[TestOutcome]:
    sim = Simulator(model)
    return [sim.run_convo(s) for s in suite]


# -- convo scripts ------------------------------------------------------------


@dataclass(frozen=True)
class Me:
    utterance: str


@dataclass(frozen=True)
class Bot:
    """Expectation on the next bot message.

    ``options`` holds one exact text, several alternatives, or (with
    ``contains``) a single required substring.
    """

    options: tuple[str, ...]
    contains: bool = False

    def accepts(self, actual: str) -> bool:
        if self.contains:
            return self.options[0] in actual
        return actual in self.options

    def describe(self) -> str:
        if self.contains:
            return f"contains {self.options[0]!r}"
        return self.options[0] if len(self.options) == 1 else " | ".join(self.options)


@dataclass(frozen=True)
class ConvoScript:
    name: str
    turns: tuple[Me | Bot, ...]
    language: str | None = None

    def __post_init__(self):
        if not self.turns or not isinstance(self.turns[0], Me):
            raise ConvoParseError(f"{self.name}: a convo must start with a #me turn")

    def to_text(self) -> str:
        blocks = [self.name]
        if self.language:
            blocks.append(f"#lang {self.language}")
        for turn in self.turns:
            if isinstance(turn, Me):
                blocks.append(f"#me\n{turn.utterance}")
            elif turn.contains:
                blocks.append(f"#bot contains\n{turn.options[0]}")
            else:
                blocks.append("#bot\n" + "\n".join(turn.options))
        return "\n\n".join(blocks) + "\n"


class Verdict(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"


@dataclass(frozen=True)
class TestOutcome:
    script: str
    verdict: Verdict
    failing_turn: int | None = None
    expected: str | None = None
    actual: str | None = None

    __test__ = False

    @property
    def passed(self) -> bool:
        return self.verdict is Verdict.PASS


def parse_convo(text: str, source: str = "<convo>") -> ConvoScript:
    blocks = [b.strip("\n") for b in re.split(r"\n\s*\n", text.replace("\r\n", "\n").strip())]
    if not blocks or not blocks[0].strip():
        raise ConvoParseError(f"{source}: empty convo")
    header = blocks[0].splitlines()
    name = header[0].strip()
    language = None
    turns: list[Me | Bot] = []
    for block in blocks[1:]:
        lines = [l.rstrip() for l in block.splitlines()]
        head, body = lines[0].strip(), [l.strip() for l in lines[1:] if l.strip()]
        tag = head.split(None, 1)
        if tag[0] == "#lang":
            language = tag[1].strip() if len(tag) > 1 else (body[0] if body else None)
        elif tag[0] == "#me":
            turns.append(Me(" ".join(body)))
        elif tag[0] == "#bot":
            contains = len(tag) > 1 and tag[1].strip() == "contains"
            if not body:
                raise ConvoParseError(f"{source}: #bot block without text")
            if contains and len(body) != 1:
                raise ConvoParseError(f"{source}: '#bot contains' takes exactly one line")
            turns.append(Bot(tuple(body), contains))
        else:
            raise ConvoParseError(f"{source}: unknown block {head!r}")
    if not turns:
        raise ConvoParseError(f"{source}: no turns")
    try:
        return ConvoScript(name, tuple(turns), language)
    except ConvoParseError as exc:
        raise ConvoParseError(f"{source}: {exc}") from None


def load_suite(directory: str | Path) -> list[ConvoScript]:
    """Parse every ``*.convo.txt`` file of ``directory`` in name order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConvoParseError(f"{directory}: suite folder not found")
    paths = sorted(directory.glob("*.convo.txt"))
    if not paths:
        raise ConvoParseError(f"{directory}: no *.convo.txt scripts")
    return [parse_convo(p.read_text(encoding="utf-8"), str(p)) for p in paths]


# -- equivalence probing ------------------------------------------------------


class ProbeVerdict(str, enum.Enum):
    DISTINGUISHED = "DISTINGUISHED"
    LIKELY_EQUIVALENT = "LIKELY_EQUIVALENT"


@dataclass(frozen=True)
class ProbeResult:
    verdict: ProbeVerdict
    witness: ConvoScript | None = None
    alphabet_size: int = 0
    sampled: bool = False  # alphabet exceeded the cap and was truncated
    explored: int = 0


def probe_alphabet(model: ChatbotModel) -> tuple[list[str], bool]:
    """Utterances the probe may send, and whether the cap truncated them.

    Training phrases with each wildcard instantiated by every entry value
    and synonym of its entity, followed by the bare slot values themselves
    so pending required parameters can be answered.
    """
    sim = Simulator(model)
    phrases: dict[str, None] = {}
    slot_values: dict[str, None] = {}
    languages = [l.casefold() for l in model.supported_languages]
    for it in model.intents:
        for lang, items in it.training_phrases.items():
            if lang.casefold() not in languages:
                continue
            for ph in items:
                choices: list[list[str]] = []
                for part in ph.parts:
                    if part.entity_ref:
                        options = _surface_forms(sim, part.entity_ref) or [part.text]
                        slot_values.update(dict.fromkeys(normalize(o) for o in options))
                        choices.append(options)
                    else:
                        choices.append([part.text])
                for combo in _product(choices):
                    text = normalize("".join(combo))
                    if text:
                        phrases[text] = None
    alphabet = list(phrases) + [v for v in slot_values if v and v not in phrases]
    if len(alphabet) > ALPHABET_CAP:
        return alphabet[:ALPHABET_CAP], True
    return alphabet, False


def _surface_forms(sim: Simulator, ref: str) -> list[str]:
    matcher = sim.entity_matcher(ref)
    if not matcher.canonical:
        return []
    return list(matcher.canonical)


def _product(choices: list[list[str]]) -> Iterable[tuple[str, ...]]:
    if not choices:
        yield ()
        return
    head, *rest = choices
    for h in head:
        for tail in _product(rest):
            yield (h, *tail)


def equivalence_probe(
    original: ChatbotModel,
    mutant: ChatbotModel,
    depth: int = 3,
    alphabet: Sequence[str] | None = None,
) -> ProbeResult:
    """Search for a conversation on which the two agents answer differently.

    Breadth-first over utterance sequences up to ``depth`` turns, once per
    supported language; pairs of simulator states already seen at a
    shallower level are not expanded again because they have identical
    futures. A distinguishing sequence is
    only reported once its witness script passes on ``original`` and fails
    on ``mutant``.
    """
    if not 1 <= depth <= MAX_PROBE_DEPTH:
        raise ValueError(f"depth must be within 1..{MAX_PROBE_DEPTH}, got {depth}")
    sampled = False
    if alphabet is None:
        alphabet, sampled = probe_alphabet(original)
    orig_sim, mut_sim = Simulator(original), Simulator(mutant)
    explored = 0
    languages = [original.default_language] + [
        l for l in original.supported_languages if l.casefold() != original.default_language.casefold()
    ]
    for n, language in enumerate(languages):
        witness, count = _search(orig_sim, mut_sim, alphabet, depth, None if n == 0 else language)
        explored += count
        if witness is not None:
            return ProbeResult(ProbeVerdict.DISTINGUISHED, witness, len(alphabet), sampled, explored)
    return ProbeResult(ProbeVerdict.LIKELY_EQUIVALENT, None, len(alphabet), sampled, explored)


def _search(orig_sim: Simulator, mut_sim: Simulator, alphabet: Sequence[str], depth: int,
            language: str | None) -> tuple[ConvoScript | None, int]:
    start = (ConversationState(), ConversationState(), (), ())
    frontier = [start]
    seen = {(start[0].signature(), start[1].signature(), ())}
    explored = 0
    for _ in range(depth):
        nxt = []
        for o_state, m_state, surplus, history in frontier:
            for utt in alphabet:
                explored += 1
                o_new, o_resp = orig_sim.step(o_state, utt, language)
                m_new, m_resp = mut_sim.step(m_state, utt, language)
                queue = list(surplus) + m_resp
                diverged = False
                for r in o_resp:
                    if not queue or queue[0] != r:
                        diverged = True
                        break
                    queue.pop(0)
                turns = history + ((utt, tuple(o_resp)),)
                if diverged:
                    witness = _witness_script(turns, language)
                    if orig_sim.run_convo(witness).passed and not mut_sim.run_convo(witness).passed:
                        return witness, explored
                    continue
                key = (o_new.signature(), m_new.signature(), tuple(queue))
                if key in seen:
                    continue
                seen.add(key)
                nxt.append((o_new, m_new, tuple(queue), turns))
        frontier = nxt
    return None, explored


def _witness_script(turns, language: str | None = None) -> ConvoScript:
    out: list[Me | Bot] = []
    for utt, responses in turns:
        out.append(Me(utt))
        out.extend(Bot((r,)) for r in responses)
    return ConvoScript("witness", tuple(out), language)

"""Shared corpus paths and independent oracles for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import chatmut
from chatmut.metamodel import Loc

DATA = Path(chatmut.__file__).parent / "data"
AGENTS = DATA / "agents"
SUITES = DATA / "suites"
FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = ("hotel", "appointment", "device", "nutrition")


def _token(key) -> str:
    return str(key).replace("~", "~0").replace("/", "~1")


def diff_json(old, new, pointer: str = "") -> list[str]:
    """Pointers of the smallest subtrees that differ between two JSON values.

    A list that lost or gained exactly one element reports that element's
    index rather than the whole list.
    """
    if type(old) is not type(new):
        return [pointer]
    if isinstance(old, dict):
        out: list[str] = []
        for key in list(old) + [k for k in new if k not in old]:
            child = f"{pointer}/{_token(key)}"
            if key not in old or key not in new:
                out.append(child)
            else:
                out += diff_json(old[key], new[key], child)
        return out
    if isinstance(old, list):
        if len(old) == len(new):
            out = []
            for k, (a, b) in enumerate(zip(old, new)):
                out += diff_json(a, b, f"{pointer}/{k}")
            return out
        longer, shorter = (old, new) if len(old) > len(new) else (new, old)
        if len(longer) == len(shorter) + 1:
            for k in range(len(longer)):
                if longer[:k] + longer[k + 1:] == shorter:
                    return [f"{pointer}/{k}"]
        return [pointer]
    return [] if old == new else [pointer]


def diff_trees(old: dict[str, bytes], new: dict[str, bytes]) -> list[Loc]:
    """Changed locations between two agent file trees (path -> bytes)."""
    out: list[Loc] = []
    for path in sorted(set(old) | set(new)):
        if path not in old or path not in new:
            out.append(Loc(path, ""))
        elif old[path] != new[path]:
            a = json.loads(old[path].decode("utf-8-sig"))
            b = json.loads(new[path].decode("utf-8-sig"))
            out += [Loc(path, p) for p in diff_json(a, b)]
    return out


def expected_counts(m) -> dict[str, int]:
    """Closed forms over the hand-counted manifest."""
    params = m["parameters_per_intent"]
    n_params = sum(map(len, params.values()))
    ctx_names = {c for v in m["input_contexts"].values() for c in v} | {
        c for v in m["output_contexts"].values() for c in v}
    in_ctx = sum(map(len, m["input_contexts"].values()))
    out_ctx = sum(map(len, m["output_contexts"].values()))
    entries = sum(len(e) for e in m["entries"].values())
    synonyms = sum(len(s) for e in m["entries"].values() for s in e.values())
    n_intents, n_entities = len(m["intents"]), len(m["simple_entities"])
    return {
        "changeChatbotLanguage": len(m["languages"]) if len(m["languages"]) > 1 else 0,
        "removeChatbotIntent": n_intents,
        "removeChatbotEntity": n_entities,
        "removeChatbotFlow": len(m["flows"]),
        "changeFlowInContextName": in_ctx if len(ctx_names) > 1 else 0,
        "removeFlowInContextName": in_ctx,
        "changeFlowOutContextName": out_ctx if len(ctx_names) > 1 else 0,
        "removeFlowOutContextName": out_ctx,
        "changeFlowOutContextLifespan": out_ctx,
        "removeFlowOutContextParameter": sum(map(len, m["output_context_parameters"].values())),
        "changeIntentName": n_intents,
        "toggleIntentFallback": n_intents,
        "removeIntentFallback": m["fallback_flags_present"],
        "changeIntentPriority": n_intents,
        "removeIntentParameter": n_params,
        "changeParameterName": sum(len(p) for p in params.values() if len(p) > 1),
        "removeParameterName": n_params,
        "toggleParameterIsRequired": n_params,
        "removeParameterPrompt": sum(m["prompts"].values()),
        "changeSEntityName": n_entities if n_entities > 1 else 0,
        "removeSEntityName": n_entities,
        "changeSInputValue": entries,
        "changeSInputSynonym": synonyms,
        "changeTActionValue": sum(m["text_variants"].values()),
    }

"""Dialogflow ES agent-export adapter.

Reads an unpacked export directory into a :class:`ChatbotModel`, keeps the
raw bytes of every file so untouched files are written back unchanged, and
implements the :class:`~chatmut.metamodel.Finder` used by the mutation
operators.

Layout::

    agent.json
    package.json
    intents/<name>.json
    intents/<name>_usersays_<lang>.json
    entities/<name>.json
    entities/<name>_entries_<lang>.json
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import jsonpatch
import jsonpointer

from .errors import (
    DestinationNotEmpty,
    IoFailure,
    MalformedDocument,
    MissingAgentManifest,
    PathNotFound,
    StaleDescriptor,
)
from .metamodel import (
    ABSENT,
    DEFAULT_LIFESPAN,
    DEFAULT_PRIORITY,
    Action,
    ActionKind,
    ChatbotModel,
    Edit,
    EntityDef,
    EntityEntry,
    EntityKind,
    Finder,
    Intent,
    Loc,
    OutputContext,
    Parameter,
    PhrasePart,
    TrainingPhrase,
)

log = logging.getLogger(__name__)

AGENT_FILE = "agent.json"
_USERSAYS = re.compile(r"^intents/(?P<stem>.+)_usersays_(?P<lang>[A-Za-z0-9-]+)\.json$")
_ENTRIES = re.compile(r"^entities/(?P<stem>.+)_entries_(?P<lang>[A-Za-z0-9-]+)\.json$")
_TEXT_TYPES = (0, "0", "message")
_IMAGE_TYPES = (3, "3", "image")


class OutputMode(str, enum.Enum):
    FULL = "full"
    MODIFIED = "modified"


@dataclass
class SourceMap:
    root: str | None
    files: dict[str, bytes]
    documents: dict[str, Any]
    locations: dict[tuple, Loc] = field(default_factory=dict)
    companions: dict[str, tuple[str, ...]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def digest(self) -> str:
        h = hashlib.sha256()
        for path in sorted(self.files):
            h.update(path.encode() + b"\0" + self.files[path] + b"\0")
        return h.hexdigest()


@dataclass(frozen=True)
class ElementHandle:
    file: str
    pointer: str
    value: Any


@dataclass(frozen=True)
class WrittenFile:
    path: str
    sha256: str


@dataclass(frozen=True)
class WriteManifest:
    files: tuple[WrittenFile, ...]
    deleted: tuple[str, ...] = ()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dump_document(doc: Any) -> bytes:
    return (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8")


def parse_document(path: str, data: bytes) -> Any:
    try:
        return json.loads(data.decode("utf-8-sig"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedDocument(path, exc) from exc


def read_tree(root: str | os.PathLike) -> dict[str, bytes]:
    root = Path(root)
    files = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        try:
            files[rel] = path.read_bytes()
        except OSError as exc:
            raise IoFailure(rel, exc) from exc
    return files


def load_agent(
    root: str | os.PathLike,
    *,
    overlay: Mapping[str, bytes] | None = None,
    removed: Iterable[str] = (),
) -> ChatbotModel:
    """Load the export at ``root``.

    ``overlay`` replaces or adds files and ``removed`` drops files before
    parsing; together they reconstruct a mutant saved in modified-only mode.
    """
    if not Path(root, AGENT_FILE).is_file():
        raise MissingAgentManifest(f"{root}: no {AGENT_FILE}")
    files = read_tree(root)
    if overlay:
        files.update(overlay)
    for path in removed:
        files.pop(path, None)
    return load_files(files, root=str(root))


def load_files(
    files: Mapping[str, bytes],
    *,
    root: str | None = None,
    parsed: Mapping[str, Any] | None = None,
) -> ChatbotModel:
    """Build a model from an in-memory file set (relative posix path -> bytes)."""
    if AGENT_FILE not in files:
        raise MissingAgentManifest(f"{root or '<memory>'}: no {AGENT_FILE}")
    parsed = parsed or {}
    files = dict(sorted(files.items()))
    docs: dict[str, Any] = {}

    def doc(path: str) -> Any:
        if path not in docs:
            docs[path] = parsed[path] if path in parsed else parse_document(path, files[path])
        return docs[path]

    smap = SourceMap(root=root, files=files, documents=docs)
    intent_defs, usersays, entity_defs, entries = [], {}, [], {}
    for path in files:
        if m := _USERSAYS.match(path):
            usersays.setdefault(m["stem"], []).append((m["lang"], path))
        elif m := _ENTRIES.match(path):
            entries.setdefault(m["stem"], []).append((m["lang"], path))
        elif path.startswith("intents/") and path.endswith(".json") and path.count("/") == 1:
            intent_defs.append(path)
        elif path.startswith("entities/") and path.endswith(".json") and path.count("/") == 1:
            entity_defs.append(path)

    agent = doc(AGENT_FILE)
    if not isinstance(agent, dict):
        raise MalformedDocument(AGENT_FILE, "expected a JSON object")
    default_language = agent.get("language") or "en"
    languages: list[str] = []
    for ptr, code in [("language", agent.get("language"))] + [
        (f"supportedLanguages/{j}", c) for j, c in enumerate(agent.get("supportedLanguages") or [])
    ]:
        if not isinstance(code, str) or not code:
            continue
        if any(code.casefold() == l.casefold() for l in languages):
            continue
        smap.locations[("language", len(languages))] = Loc(AGENT_FILE, "/" + ptr)
        languages.append(code)
    if not languages:
        languages.append(default_language)
    lifespan_default = DEFAULT_LIFESPAN
    name = agent.get("displayName") or agent.get("name") or (Path(root).name if root else "agent")

    stem_of = lambda p: p.rsplit("/", 1)[1][: -len(".json")]
    intent_stems = {stem_of(p) for p in intent_defs}
    entity_stems = {stem_of(p) for p in entity_defs}
    for stem, group in sorted(usersays.items()):
        if stem not in intent_stems:
            for _, path in group:
                smap.warnings.append(f"OrphanCompanion: {path}")
                log.warning("orphan usersays file preserved verbatim: %s", path)
    for stem, group in sorted(entries.items()):
        if stem not in entity_stems:
            for _, path in group:
                smap.warnings.append(f"OrphanCompanion: {path}")
                log.warning("orphan entries file preserved verbatim: %s", path)

    intents = []
    for i, path in enumerate(intent_defs):
        stem = stem_of(path)
        companions = tuple(p for _, p in usersays.get(stem, []))
        smap.companions[path] = companions
        intents.append(
            _build_intent(i, path, doc(path), [(lang, p, doc(p)) for lang, p in usersays.get(stem, [])],
                          default_language, lifespan_default, smap)
        )

    entities = []
    for e, path in enumerate(entity_defs):
        stem = stem_of(path)
        smap.companions[path] = tuple(p for _, p in entries.get(stem, []))
        entities.append(_build_entity(e, path, doc(path), [(lang, p, doc(p)) for lang, p in entries.get(stem, [])], smap))

    return ChatbotModel(
        name=str(name),
        default_language=default_language,
        supported_languages=tuple(languages),
        intents=tuple(intents),
        entities=tuple(entities),
        default_lifespan=lifespan_default,
        source_map=smap,
    )


def _obj(path: str, value: Any) -> dict:
    if not isinstance(value, dict):
        raise MalformedDocument(path, "expected a JSON object")
    return value


def _build_intent(i, path, d, usersays, default_language, lifespan_default, smap) -> Intent:
    d = _obj(path, d)
    base = Loc(path)
    locs = smap.locations
    locs[("intent", i)] = base

    contexts = []
    for j, ctx in enumerate(d.get("contexts") or []):
        locs[("input_context", i, j)] = base.child("contexts", j)
        contexts.append(ctx if isinstance(ctx, str) else "")

    outputs, params, responses = [], [], {}
    for r, resp in enumerate(d.get("responses") or []):
        rloc = base.child("responses", r)
        for k, oc in enumerate(resp.get("affectedContexts") or []):
            j = len(outputs)
            oloc = rloc.child("affectedContexts", k)
            locs[("output_context", i, j)] = oloc
            cparams = oc.get("parameters") or {}
            for key in cparams:
                locs[("context_parameter", i, j, key)] = oloc.child("parameters", key)
            lifespan = oc.get("lifespan", lifespan_default)
            outputs.append(OutputContext(
                name=oc.get("name") or "",
                lifespan=lifespan,
                parameters=tuple((k2, str(v)) for k2, v in cparams.items()),
            ))
        for k, p in enumerate(resp.get("parameters") or []):
            j = len(params)
            ploc = rloc.child("parameters", k)
            locs[("parameter", i, j)] = ploc
            prompts: dict[str, list[str]] = {}
            for q, pr in enumerate(p.get("prompts") or []):
                lang = pr.get("lang") or default_language
                locs[("prompt", i, j, lang, len(prompts.setdefault(lang, [])))] = ploc.child("prompts", q)
                prompts[lang].append(str(pr.get("value", "")))
            params.append(Parameter(
                name=p.get("name") or "",
                data_type=p.get("dataType") or "",
                value_expr=p.get("value") or "",
                is_required=_tristate(p, "required"),
                is_list=_tristate(p, "isList"),
                prompts={lang: tuple(v) for lang, v in prompts.items()},
            ))
        for m, msg in enumerate(resp.get("messages") or []):
            lang = msg.get("lang") or default_language
            bucket = responses.setdefault(lang, [])
            a = len(bucket)
            mloc = rloc.child("messages", m)
            locs[("action", i, lang, a)] = mloc
            kind = msg.get("type")
            if kind in _TEXT_TYPES:
                speech = msg.get("speech", [])
                if isinstance(speech, str):
                    variants = (speech,)
                    locs[("text_variant", i, lang, a, 0)] = mloc.child("speech")
                else:
                    variants = tuple(str(s) for s in speech)
                    for v in range(len(variants)):
                        locs[("text_variant", i, lang, a, v)] = mloc.child("speech", v)
                bucket.append(Action(ActionKind.TEXT, variants))
            elif kind in _IMAGE_TYPES:
                bucket.append(Action(ActionKind.IMAGE, raw_payload=msg))
            else:
                bucket.append(Action(ActionKind.EMPTY, raw_payload=msg))
    if d.get("webhookUsed"):
        for lang in list(responses) or [default_language]:
            responses.setdefault(lang, []).append(
                Action(ActionKind.HTTP_REQUEST, raw_payload={"webhookUsed": True}))

    phrases: dict[str, list[TrainingPhrase]] = {}
    for lang, upath, udoc in usersays:
        if not isinstance(udoc, list):
            raise MalformedDocument(upath, "expected a JSON array")
        for k, item in enumerate(udoc):
            parts = []
            for part in item.get("data") or []:
                alias = part.get("alias") or None
                meta = part.get("meta") or None
                if meta == "@sys.ignore":
                    meta = None
                parts.append(PhrasePart(str(part.get("text", "")), alias, meta))
            bucket = phrases.setdefault(lang, [])
            locs[("phrase", i, lang, len(bucket))] = Loc(upath, f"/{k}")
            bucket.append(TrainingPhrase(tuple(parts), lang))

    return Intent(
        name=d.get("name") or "",
        priority=d.get("priority", DEFAULT_PRIORITY),
        is_fallback=_tristate(d, "fallbackIntent"),
        input_contexts=tuple(contexts),
        output_contexts=tuple(outputs),
        parameters=tuple(params),
        training_phrases={lang: tuple(v) for lang, v in phrases.items()},
        responses={lang: tuple(v) for lang, v in responses.items()},
    )


def _tristate(d: dict, key: str) -> bool | None:
    return bool(d[key]) if key in d and d[key] is not None else None


def _build_entity(e, path, d, entry_docs, smap) -> EntityDef:
    d = _obj(path, d)
    smap.locations[("entity", e)] = Loc(path)
    if d.get("isRegexp"):
        kind = EntityKind.REGEX
    elif d.get("isEnum"):
        kind = EntityKind.COMPLEX
    else:
        kind = EntityKind.SIMPLE
    entries: dict[str, tuple[EntityEntry, ...]] = {}
    raw = None
    if kind is EntityKind.REGEX:
        raw = {"definition": d, "entries": {lang: edoc for lang, _, edoc in entry_docs}}
    else:
        for lang, epath, edoc in entry_docs:
            if not isinstance(edoc, list):
                raise MalformedDocument(epath, "expected a JSON array")
            out = []
            for k, item in enumerate(edoc):
                smap.locations[("entry", e, lang, k)] = Loc(epath, f"/{k}")
                syns = item.get("synonyms") or []
                for s in range(len(syns)):
                    smap.locations[("synonym", e, lang, k, s)] = Loc(epath, f"/{k}/synonyms/{s}")
                out.append(EntityEntry(str(item.get("value", "")), tuple(str(s) for s in syns)))
            entries[lang] = tuple(out)
        if kind is EntityKind.COMPLEX:
            raw = {"definition": d, "entries": {lang: edoc for lang, _, edoc in entry_docs}}
    return EntityDef(name=d.get("name") or "", kind=kind, entries=entries, raw_payload=raw)


# -- writing ------------------------------------------------------------------


def save_agent(
    model: ChatbotModel,
    dest: str | os.PathLike,
    mode: OutputMode | str = OutputMode.FULL,
    dirty: Iterable[str] = (),
    *,
    overwrite: bool = False,
) -> WriteManifest:
    """Write ``model`` under ``dest``.

    Full mode writes every file; modified mode writes only the ``dirty``
    files that still exist. Dirty files absent from the model are reported
    as deleted.
    """
    mode = OutputMode(mode)
    files = model.source_map.files
    dirty = set(dirty)
    dest = Path(dest)
    if dest.exists() and any(dest.iterdir()) and not overwrite:
        raise DestinationNotEmpty(str(dest))
    if mode is OutputMode.FULL:
        selected = list(files)
    else:
        selected = [p for p in files if p in dirty]
    written = []
    for rel in selected:
        target = dest / rel
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(files[rel])
        except OSError as exc:
            raise IoFailure(str(target), exc) from exc
        written.append(WrittenFile(rel, sha256(files[rel])))
    deleted = tuple(sorted(p for p in dirty if p not in files))
    return WriteManifest(tuple(written), deleted)


# -- finding ------------------------------------------------------------------


def resolve(model: ChatbotModel, loc: Loc | str) -> ElementHandle:
    if isinstance(loc, str):
        loc = Loc.parse(loc)
    value = FINDER.read(model, loc)
    if value is ABSENT:
        raise PathNotFound(str(loc))
    return ElementHandle(loc.file, loc.pointer, value)


_PROPERTY_FIELDS = {
    "intent": {"name": "name", "priority": "priority", "fallback": "fallbackIntent"},
    "output_context": {"name": "name", "lifespan": "lifespan"},
    "parameter": {"name": "name", "required": "required", "list": "isList"},
    "entity": {"name": "name"},
    "entry": {"value": "value"},
}


class DialogflowFinder(Finder):
    def property_loc(self, model: ChatbotModel, key: tuple, prop: str) -> Loc:
        base = model.locate(key)
        if base is None:
            raise PathNotFound(f"{key!r}")
        try:
            return base.child(_PROPERTY_FIELDS[key[0]][prop])
        except KeyError:
            raise PathNotFound(f"{key[0]} has no property {prop!r}") from None

    def read(self, model: ChatbotModel, loc: Loc) -> Any:
        smap = model.source_map
        if loc.file not in smap.files:
            return ABSENT
        if loc.file not in smap.documents:
            smap.documents[loc.file] = parse_document(loc.file, smap.files[loc.file])
        try:
            return jsonpointer.resolve_pointer(smap.documents[loc.file], loc.pointer)
        except jsonpointer.JsonPointerException:
            return ABSENT

    def companions(self, model: ChatbotModel, key: tuple) -> tuple[str, ...]:
        loc = model.locate(key)
        if loc is None or loc.pointer:
            return ()
        return model.source_map.companions.get(loc.file, ())

    def apply_edits(self, model: ChatbotModel, edits: list[Edit]) -> tuple[ChatbotModel, frozenset[str]]:
        smap = model.source_map
        files = dict(smap.files)
        docs = {p: d for p, d in smap.documents.items()}
        touched: set[str] = set()
        by_file: dict[str, list[Edit]] = {}
        for ed in edits:
            if ed.loc.file not in files:
                raise StaleDescriptor(str(ed.loc))
            touched.add(ed.loc.file)
            by_file.setdefault(ed.loc.file, []).append(ed)
        for path, file_edits in by_file.items():
            if any(ed.loc.pointer == "" and ed.value is ABSENT for ed in file_edits):
                files.pop(path)
                docs.pop(path, None)
                continue
            current = docs[path] if path in docs else parse_document(path, files[path])
            ops = []
            for ed in file_edits:
                exists = self.read(model, ed.loc) is not ABSENT
                if ed.value is ABSENT:
                    if not exists:
                        raise StaleDescriptor(str(ed.loc))
                    ops.append({"op": "remove", "path": ed.loc.pointer})
                else:
                    ops.append({"op": "replace" if exists else "add", "path": ed.loc.pointer,
                                "value": copy.deepcopy(ed.value)})
            try:
                new = jsonpatch.apply_patch(current, ops, in_place=False)
            except (jsonpatch.JsonPatchException, jsonpointer.JsonPointerException) as exc:
                raise StaleDescriptor(f"{path}: {exc}") from exc
            docs[path] = new
            files[path] = dump_document(new)
        mutant = load_files(files, root=smap.root, parsed=docs)
        return mutant, frozenset(touched)


FINDER = DialogflowFinder()

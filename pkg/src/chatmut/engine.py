"""Mutation campaigns: generate mutants, write the report, score test suites."""

from __future__ import annotations

import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .dialogflow_io import (
    OutputMode,
    WrittenFile,
    dump_document,
    load_agent,
    read_tree,
    save_agent,
)
from .errors import (
    ChatmutError,
    ConfigInvalid,
    MutantLoadFailed,
    OutputUnwritable,
    SourceLoadFailed,
    SuiteFailsOnOriginal,
    UnknownOperator,
)
from .metamodel import ChatbotModel
from .operators import (
    OPERATOR_IDS,
    Category,
    MutationDescriptor,
    apply,
    enumerate_targets,
)
from .simulator import ConvoScript, ProbeVerdict, Simulator, equivalence_probe

log = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SIDECAR_FILE = "mutation.json"
MAX_SEED = 2**64 - 1

_CONFIG_KEYS = {"source_root", "output_root", "output_mode", "operators", "seed", "overwrite", "max_mutants"}


@dataclass(frozen=True)
class MutationConfig:
    source_root: Path
    output_root: Path
    output_mode: OutputMode = OutputMode.FULL
    operators: tuple[str, ...] | None = None  # None selects every operator
    seed: int = 0
    overwrite: bool = False
    max_mutants: int | None = None

    def selected_operators(self) -> list[str]:
        if self.operators is None:
            return list(OPERATOR_IDS)
        chosen = set(self.operators)
        return [op for op in OPERATOR_IDS if op in chosen]

    def check(self) -> None:
        for op in self.operators or ():
            if op not in OPERATOR_IDS:
                raise ConfigInvalid(f"unknown operator {op!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MAX_SEED:
            raise ConfigInvalid(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if self.max_mutants is not None and (not isinstance(self.max_mutants, int) or self.max_mutants < 0):
            raise ConfigInvalid(f"max_mutants must be a non-negative integer, got {self.max_mutants!r}")
        src, out = Path(self.source_root).resolve(), Path(self.output_root).resolve()
        if src == out or src in out.parents:
            raise ConfigInvalid("output_root must not be the source folder or lie inside it")


def parse_operators(value: Any) -> tuple[str, ...] | None:
    if value is None or value == "all" or value == ["all"]:
        return None
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigInvalid("operators must be 'all' or a list of operator ids")
    for op in value:
        if op not in OPERATOR_IDS:
            raise UnknownOperator(f"unknown operator {op!r}")
    return tuple(value)


def load_config(path: str | os.PathLike, **overrides: Any) -> MutationConfig:
    """Read a JSON campaign config; relative paths are taken from the file's folder.

    Non-None ``overrides`` replace values from the file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid(f"{path}: expected a JSON object")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("source_root", "output_root"):
        if key in raw and not Path(raw[key]).is_absolute():
            raw[key] = str(path.parent / raw[key])
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> MutationConfig:
    try:
        cfg = MutationConfig(
            source_root=Path(raw["source_root"]),
            output_root=Path(raw["output_root"]),
            output_mode=OutputMode(raw.get("output_mode", "full")),
            operators=parse_operators(raw.get("operators", "all")),
            seed=raw.get("seed", 0),
            overwrite=bool(raw.get("overwrite", False)),
            max_mutants=raw.get("max_mutants"),
        )
    except KeyError as exc:
        raise ConfigInvalid(f"missing config key {exc}") from None
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None
    cfg.check()
    return cfg


# -- report -------------------------------------------------------------------


@dataclass(frozen=True)
class MutantArtifact:
    mutant_id: str
    directory: str
    files: tuple[WrittenFile, ...]
    deleted: tuple[str, ...] = ()


@dataclass(frozen=True)
class ReportRow:
    descriptor: MutationDescriptor
    artifact: MutantArtifact | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        d = self.descriptor.to_dict()
        d["directory"] = self.artifact.directory if self.artifact else None
        d["files"] = [{"path": f.path, "sha256": f.sha256} for f in self.artifact.files] if self.artifact else []
        d["deleted"] = list(self.artifact.deleted) if self.artifact else []
        d["error"] = self.error
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ReportRow:
        artifact = None
        if d.get("directory"):
            artifact = MutantArtifact(
                d["mutant_id"],
                d["directory"],
                tuple(WrittenFile(f["path"], f["sha256"]) for f in d.get("files", [])),
                tuple(d.get("deleted", [])),
            )
        return cls(MutationDescriptor.from_dict(d), artifact, d.get("error"))


@dataclass
class MutationReport:
    tool_version: str
    seed: int
    source_root: str
    source_digest: str
    output_mode: OutputMode
    operators: list[str]
    rows: list[ReportRow] = field(default_factory=list)
    output_root: Path | None = None  # where the report lives; not serialized

    def summary(self) -> dict:
        generated = {op: 0 for op in self.operators}
        categories = {c.value: 0 for c in Category}
        for row in self.rows:
            generated[row.descriptor.operator] += 1
            categories[row.descriptor.category.value] += 1
        return {
            "generated": generated,
            "by_category": categories,
            "total": len(self.rows),
            "errors": sum(1 for r in self.rows if r.error),
        }

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "seed": self.seed,
            "source_root": self.source_root,
            "source_digest": self.source_digest,
            "output_mode": self.output_mode.value,
            "operators": list(self.operators),
            "mutants": [r.to_dict() for r in self.rows],
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict, output_root: Path | None = None) -> MutationReport:
        return cls(
            tool_version=d["tool_version"],
            seed=d["seed"],
            source_root=d["source_root"],
            source_digest=d["source_digest"],
            output_mode=OutputMode(d["output_mode"]),
            operators=list(d["operators"]),
            rows=[ReportRow.from_dict(r) for r in d["mutants"]],
            output_root=output_root,
        )


def load_report(path: str | os.PathLike) -> MutationReport:
    """Load ``report.json`` from a campaign folder (or the file itself)."""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read report {path}: {exc}") from exc
    return MutationReport.from_dict(data, output_root=path.parent)


# -- campaign -----------------------------------------------------------------


def _prepare_output(root: Path, overwrite: bool) -> None:
    if root.exists() and not root.is_dir():
        raise OutputUnwritable(f"{root} is not a directory")
    if root.exists() and any(root.iterdir()):
        if not overwrite:
            raise OutputUnwritable(f"{root} is not empty (set overwrite to replace a previous campaign)")
        if not (root / REPORT_FILE).is_file():
            raise OutputUnwritable(f"refusing to clear {root}: it does not hold a previous campaign")
        for child in root.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputUnwritable(f"{root}: {exc}") from exc


def run_campaign(config: MutationConfig) -> MutationReport:
    """Enumerate, apply and write every selected mutant, then ``report.json``.

    A failure on one mutant is recorded in its row and does not stop the
    campaign.
    """
    config.check()
    try:
        model = load_agent(config.source_root)
    except ChatmutError as exc:
        raise SourceLoadFailed(str(exc)) from exc
    out = Path(config.output_root)
    _prepare_output(out, config.overwrite)

    operators = config.selected_operators()
    report = MutationReport(
        tool_version=__version__,
        seed=config.seed,
        source_root=str(config.source_root),
        source_digest=model.source_map.digest(),
        output_mode=config.output_mode,
        operators=operators,
        output_root=out,
    )
    for op in operators:
        descriptors = enumerate_targets(model, op, seed=config.seed)
        if config.max_mutants is not None:
            descriptors = descriptors[: config.max_mutants]
        for d in descriptors:
            report.rows.append(_emit(model, d, out, config.output_mode))
        log.info("%s: %d mutants", op, len(descriptors))
    try:
        (out / REPORT_FILE).write_text(report.to_json(), encoding="utf-8")
    except OSError as exc:
        raise OutputUnwritable(f"{out / REPORT_FILE}: {exc}") from exc
    return report


def _emit(model: ChatbotModel, d: MutationDescriptor, out: Path, mode: OutputMode) -> ReportRow:
    try:
        mutant, dirty = apply(model, d)
        manifest = save_agent(mutant, out / d.mutant_id, mode, dirty)
        # a pure deletion in modified mode writes no agent file
        (out / d.mutant_id).mkdir(parents=True, exist_ok=True)
        (out / d.mutant_id / SIDECAR_FILE).write_bytes(
            dump_document({"descriptor": d.to_dict(), "deleted": list(manifest.deleted)})
        )
    except (ChatmutError, OSError) as exc:
        log.error("mutant %s failed: %s", d.mutant_id, exc)
        return ReportRow(d, None, f"{type(exc).__name__}: {exc}")
    return ReportRow(d, MutantArtifact(d.mutant_id, d.mutant_id, manifest.files, manifest.deleted))


def load_mutant(report: MutationReport, row: ReportRow) -> ChatbotModel:
    """Rebuild the agent of one report row from its folder on disk."""
    if row.artifact is None:
        raise MutantLoadFailed(f"{row.descriptor.mutant_id}: not generated ({row.error})")
    if report.output_root is None:
        raise MutantLoadFailed("report has no output folder")
    folder = report.output_root / row.artifact.directory
    try:
        if report.output_mode is OutputMode.FULL:
            return load_agent(folder, removed=[SIDECAR_FILE])
        overlay = read_tree(folder)
        overlay.pop(SIDECAR_FILE, None)
        return load_agent(report.source_root, overlay=overlay, removed=row.artifact.deleted)
    except ChatmutError as exc:
        raise MutantLoadFailed(f"{row.descriptor.mutant_id}: {exc}") from exc


# -- scoring ------------------------------------------------------------------


class MutantStatus:
    KILLED = "KILLED"
    SURVIVED = "SURVIVED"
    EQUIVALENT = "LIKELY_EQUIVALENT"
    INVALID = "INVALID"


CATEGORY_LABELS = {
    Category.CHATBOT: "Chatbot",
    Category.FLOW: "Flows",
    Category.INTENT: "Intents",
    Category.PARAMETER: "Parameters",
    Category.INPUT: "Inputs",
}
COLUMNS = tuple(CATEGORY_LABELS.values()) + ("Total",)


def kill_percentage(killed: int, generated: int, equivalent: int, invalid: int = 0) -> int | None:
    """Killed over non-equivalent valid mutants, rounded half up; None if undefined."""
    denominator = generated - equivalent - invalid
    if denominator <= 0:
        return None
    value = Decimal(100 * killed) / Decimal(denominator)
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass
class Tally:
    killed: int = 0
    equivalent: int = 0
    generated: int = 0
    invalid: int = 0

    @property
    def percent(self) -> int | None:
        return kill_percentage(self.killed, self.generated, self.equivalent, self.invalid)

    def cell(self) -> str:
        if self.generated == 0:
            return "-"
        pct = self.percent
        return f"{self.killed}/{self.equivalent}/{self.generated} ({'-' if pct is None else pct}%)"

    def to_dict(self) -> dict:
        return {
            "killed": self.killed,
            "equivalent": self.equivalent,
            "generated": self.generated,
            "invalid": self.invalid,
            "percent_killed": self.percent,
            "cell": self.cell(),
        }


@dataclass(frozen=True)
class MutantVerdict:
    mutant_id: str
    operator: str
    category: str
    status: str
    killed_by: tuple[str, ...] = ()
    witness: tuple[str, ...] = ()
    detail: str | None = None

    def to_dict(self) -> dict:
        return {
            "mutant_id": self.mutant_id,
            "operator": self.operator,
            "category": self.category,
            "status": self.status,
            "killed_by": list(self.killed_by),
            "witness": list(self.witness),
            "detail": self.detail,
        }


@dataclass
class ScoreTable:
    agent: str
    probe_depth: int
    mutants: list[MutantVerdict]

    def columns(self) -> dict[str, Tally]:
        cols = {label: Tally() for label in COLUMNS}
        for v in self.mutants:
            for label in (CATEGORY_LABELS[Category(v.category)], "Total"):
                t = cols[label]
                t.generated += 1
                t.killed += v.status == MutantStatus.KILLED
                t.equivalent += v.status == MutantStatus.EQUIVALENT
                t.invalid += v.status == MutantStatus.INVALID
        return cols

    def operators(self) -> dict[str, Tally]:
        out: dict[str, Tally] = {}
        for v in self.mutants:
            t = out.setdefault(v.operator, Tally())
            t.generated += 1
            t.killed += v.status == MutantStatus.KILLED
            t.equivalent += v.status == MutantStatus.EQUIVALENT
            t.invalid += v.status == MutantStatus.INVALID
        return out

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "probe_depth": self.probe_depth,
            "columns": {k: t.to_dict() for k, t in self.columns().items()},
            "operators": {k: t.to_dict() for k, t in self.operators().items()},
            "mutants": [v.to_dict() for v in self.mutants],
        }


def render_matrix(tables: Sequence[ScoreTable]) -> str:
    """Aligned text matrix: one row per agent, one column per category."""
    header = ("Chatbots",) + COLUMNS
    rows = [header]
    for t in tables:
        cols = t.columns()
        rows.append((t.agent,) + tuple(cols[c].cell() for c in COLUMNS))
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _score_one(original: ChatbotModel, mutant: ChatbotModel | None, row: ReportRow,
               suite: Sequence[ConvoScript], depth: int, load_error: str | None) -> MutantVerdict:
    d = row.descriptor
    base = dict(mutant_id=d.mutant_id, operator=d.operator, category=d.category.value)
    if mutant is None:
        return MutantVerdict(status=MutantStatus.INVALID, detail=load_error, **base)
    sim = Simulator(mutant)
    failed = tuple(s.name for s in suite if not sim.run_convo(s).passed)
    if failed:
        return MutantVerdict(status=MutantStatus.KILLED, killed_by=failed, **base)
    probe = equivalence_probe(original, mutant, depth)
    if probe.verdict is ProbeVerdict.LIKELY_EQUIVALENT:
        detail = "alphabet truncated" if probe.sampled else None
        return MutantVerdict(status=MutantStatus.EQUIVALENT, detail=detail, **base)
    witness = tuple(t.utterance for t in probe.witness.turns if hasattr(t, "utterance"))
    return MutantVerdict(status=MutantStatus.SURVIVED, witness=witness, **base)


def _score_worker(args) -> MutantVerdict:
    report_dict, output_root, row_index, suite, depth = args
    report = MutationReport.from_dict(report_dict, Path(output_root))
    original = load_agent(report.source_root)
    row = report.rows[row_index]
    try:
        mutant, err = load_mutant(report, row), None
    except MutantLoadFailed as exc:
        mutant, err = None, str(exc)
    return _score_one(original, mutant, row, suite, depth, err)


def score_campaign(
    report: MutationReport,
    suite: Sequence[ConvoScript],
    depth: int = 3,
    jobs: int = 1,
) -> ScoreTable:
    """Run ``suite`` on every mutant of ``report`` and tally kills.

    Surviving mutants are probed for behavioural equivalence; those the
    probe cannot tell apart are reported as likely-equivalent candidates
    and leave the kill-rate denominator.
    """
    try:
        original = load_agent(report.source_root)
    except ChatmutError as exc:
        raise SourceLoadFailed(str(exc)) from exc
    sim = Simulator(original)
    failures = [o for o in (sim.run_convo(s) for s in suite) if not o.passed]
    if failures:
        raise SuiteFailsOnOriginal(failures)

    if jobs > 1 and len(report.rows) > 1:
        payload = report.to_dict()
        args = [(payload, str(report.output_root), i, list(suite), depth) for i in range(len(report.rows))]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            verdicts = list(pool.map(_score_worker, args))
    else:
        verdicts = []
        for row in report.rows:
            try:
                mutant, err = load_mutant(report, row), None
            except MutantLoadFailed as exc:
                mutant, err = None, str(exc)
            verdicts.append(_score_one(original, mutant, row, suite, depth, err))
    return ScoreTable(original.name, depth, verdicts)

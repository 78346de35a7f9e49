"""Command-line entry point: ``chatmut generate|test|score|probe|validate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .dialogflow_io import OutputMode, load_agent
from .engine import (
    REPORT_FILE,
    config_from_dict,
    load_config,
    load_mutant,
    load_report,
    render_matrix,
    run_campaign,
    score_campaign,
)
from .errors import (
    ChatmutError,
    ConfigInvalid,
    ConvoParseError,
    MutantLoadFailed,
    SourceLoadFailed,
    SuiteFailsOnOriginal,
    UnknownOperator,
)
from .metamodel import validate
from .simulator import MAX_PROBE_DEPTH, equivalence_probe, load_suite, run_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOURCE = 2
EXIT_SUITE = 3
EXIT_INTERNAL = 4

log = logging.getLogger("chatmut")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; we reserve 2 for load failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _depth(value: str) -> int:
    d = int(value)
    if not 1 <= d <= MAX_PROBE_DEPTH:
        raise argparse.ArgumentTypeError(f"depth must be within 1..{MAX_PROBE_DEPTH}")
    return d


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="chatmut", description="Mutation testing for Dialogflow agents.")
    parser.add_argument("--version", action="version", version=f"chatmut {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write one folder per mutant plus report.json")
    gen.add_argument("--config", type=Path, help="JSON campaign config; flags override its values")
    gen.add_argument("--source", type=Path, help="agent export folder")
    gen.add_argument("--out", type=Path, help="output folder for mutants")
    gen.add_argument("--mode", choices=[m.value for m in OutputMode])
    gen.add_argument("--operators", help="'all' or a comma-separated list of operator ids")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--max-mutants", type=int, help="cap on mutants per operator")
    gen.add_argument("--overwrite", action="store_true", default=None)
    gen.add_argument("--json", action="store_true", help="print the report instead of its path")

    test = sub.add_parser("test", help="run a convo suite against one agent")
    test.add_argument("--source", type=Path, required=True)
    test.add_argument("--suite", type=Path, required=True)
    test.add_argument("--json", action="store_true")

    score = sub.add_parser("score", help="score suites against generated campaigns")
    score.add_argument("--out", type=Path, action="append", required=True,
                       help="campaign folder; repeat for several agents")
    score.add_argument("--suite", type=Path, action="append", required=True,
                       help="suite folder; one per --out, in the same order")
    score.add_argument("--depth", type=_depth, default=3, help="equivalence probe depth")
    score.add_argument("--jobs", type=int, default=1)
    score.add_argument("--json", action="store_true")

    probe = sub.add_parser("probe", help="search for a conversation telling a mutant apart")
    probe.add_argument("--out", type=Path, required=True, help="campaign folder")
    probe.add_argument("--mutant", required=True, help="mutant id from report.json")
    probe.add_argument("--depth", type=_depth, default=3)
    probe.add_argument("--json", action="store_true")

    val = sub.add_parser("validate", help="list meta-model violations of an agent")
    val.add_argument("--source", type=Path, required=True)
    val.add_argument("--json", action="store_true")
    return parser


def _emit_json(data) -> None:
    sys.stdout.write(json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def cmd_generate(args) -> int:
    overrides = {
        "source_root": str(args.source) if args.source else None,
        "output_root": str(args.out) if args.out else None,
        "output_mode": args.mode,
        "operators": args.operators,
        "seed": args.seed,
        "overwrite": args.overwrite,
        "max_mutants": args.max_mutants,
    }
    if args.config:
        config = load_config(args.config, **overrides)
    else:
        raw = {k: v for k, v in overrides.items() if v is not None}
        if "source_root" not in raw or "output_root" not in raw:
            raise ConfigInvalid("--source and --out are required without --config")
        config = config_from_dict(raw)
    report = run_campaign(config)
    if args.json:
        _emit_json(report.to_dict())
    else:
        print(Path(config.output_root) / REPORT_FILE)
    summary = report.summary()
    log.info("%d mutants generated, %d errors", summary["total"], summary["errors"])
    return EXIT_OK


def cmd_test(args) -> int:
    model = _load_source(args.source)
    outcomes = run_suite(model, load_suite(args.suite))
    if args.json:
        _emit_json([
            {"script": o.script, "verdict": o.verdict.value, "failing_turn": o.failing_turn,
             "expected": o.expected, "actual": o.actual}
            for o in outcomes
        ])
    else:
        width = max((len(o.script) for o in outcomes), default=0)
        for o in outcomes:
            line = f"{o.script.ljust(width)}  {o.verdict.value}"
            if not o.passed:
                line += f"  turn {o.failing_turn}: expected {o.expected!r}, got {o.actual!r}"
            print(line)
        print(f"{sum(o.passed for o in outcomes)}/{len(outcomes)} passed")
    return EXIT_OK


def cmd_score(args) -> int:
    if len(args.out) != len(args.suite):
        raise ConfigInvalid("give exactly one --suite per --out")
    tables = []
    for out, suite_dir in zip(args.out, args.suite):
        report = load_report(out)
        tables.append(score_campaign(report, load_suite(suite_dir), depth=args.depth, jobs=args.jobs))
    if args.json:
        _emit_json({"tables": [t.to_dict() for t in tables]})
    else:
        sys.stdout.write(render_matrix(tables))
    return EXIT_OK


def cmd_probe(args) -> int:
    report = load_report(args.out)
    rows = [r for r in report.rows if r.descriptor.mutant_id == args.mutant]
    if not rows:
        raise ConfigInvalid(f"no mutant {args.mutant!r} in {args.out}")
    original = _load_source(report.source_root)
    mutant = load_mutant(report, rows[0])
    result = equivalence_probe(original, mutant, args.depth)
    if args.json:
        _emit_json({
            "mutant_id": args.mutant,
            "verdict": result.verdict.value,
            "witness": result.witness.to_text() if result.witness else None,
            "alphabet_size": result.alphabet_size,
            "sampled": result.sampled,
            "explored": result.explored,
        })
    else:
        print(f"{args.mutant}: {result.verdict.value}")
        if result.witness:
            sys.stdout.write(result.witness.to_text())
    return EXIT_OK


def cmd_validate(args) -> int:
    violations = validate(_load_source(args.source))
    if args.json:
        _emit_json([{"kind": v.kind, "loc": str(v.loc) if v.loc else None, "message": v.message}
                    for v in violations])
    else:
        for v in violations:
            print(f"{v.kind}\t{v.loc or '-'}\t{v.message}")
        print(f"{len(violations)} violation(s)")
    return EXIT_OK


def _load_source(path):
    try:
        return load_agent(path)
    except ChatmutError as exc:
        raise SourceLoadFailed(str(exc)) from exc


COMMANDS = {
    "generate": cmd_generate,
    "test": cmd_test,
    "score": cmd_score,
    "probe": cmd_probe,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except SuiteFailsOnOriginal as exc:
        print(f"error: {exc}", file=sys.stderr)
        for f in exc.failures:
            print(f"  {f.script}: turn {f.failing_turn}: expected {f.expected!r}, got {f.actual!r}",
                  file=sys.stderr)
        return EXIT_SUITE
    except (SourceLoadFailed, MutantLoadFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except (ConfigInvalid, UnknownOperator, ConvoParseError, ChatmutError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to an exit code
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line entry point: ``conceptgrader <subcommand>``.

Subcommands: ``validate``, ``score``, ``aggregate``, ``evaluate`` and
``fixtures generate``.  Settings come from an optional JSON config file
(``--config``) and are overridden by flags; credentials only ever come from
the environment variable a backend names in ``token_env``.

Exit codes: 0 ok, 1 validation or metric-domain problem, 2 I/O or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .aggregate import (
    HUMAN,
    ScoreRecord,
    Source,
    aggregate_strengths,
    annotate_graph,
    mental_model_dict,
    write_mental_model,
)
from .concepts import ConceptGraph, export_dot
from .dataset import Dataset, Scenario, Triplet, enumerate_triplets, load_dataset
from .errors import ConceptGraderError, ConfigError, CredentialError, DatasetError, InputError, MetricError
from .fixtures import FixtureError, generate_fixture
from .gateway import BackendConfig, Cassette, Gateway
from .metrics import build_report, render_csv, render_text
from .parsing import FailureReason, ParsedScore, ParseFailure, Rule, parse_score

log = logging.getLogger("conceptgrader")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2

_CONFIG_KEYS = {
    "dataset",
    "output",
    "backends",
    "select_backends",
    "scenarios",
    "cassette",
    "cassette_mode",
    "parallelism",
    "propagate",
    "impute",
    "dot",
    "sources",
}


@dataclass
class RunConfig:
    dataset: Path | None = None
    output: Path = Path("out")
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    select_backends: list[str] = field(default_factory=list)
    scenarios: list[Scenario] = field(default_factory=lambda: [Scenario.GENERIC])
    cassette: Path | None = None
    cassette_mode: str = "off"  # off | record | replay
    parallelism: int | None = None
    propagate: bool = False
    impute: bool = False
    dot: bool = False
    sources: list[str] = field(default_factory=list)

    def selected(self) -> list[BackendConfig]:
        names = self.select_backends or sorted(self.backends)
        missing = [n for n in names if n not in self.backends]
        if missing:
            raise ConfigError(f"unknown backend(s): {', '.join(missing)}")
        return [self.backends[n] for n in names]


def load_run_config(args: argparse.Namespace) -> RunConfig:
    raw: dict[str, Any] = {}
    base = Path(".")
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        unknown = sorted(set(raw) - _CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        base = path.parent

    def rel(p: Any) -> Path | None:
        return None if p is None else base / p

    cfg = RunConfig()
    cfg.dataset = rel(raw.get("dataset"))
    cfg.output = rel(raw.get("output")) or cfg.output
    for b in raw.get("backends", []):
        bc = BackendConfig.from_dict(b)
        cfg.backends[bc.backend_id] = bc
    cfg.select_backends = list(raw.get("select_backends", []))
    if "scenarios" in raw:
        cfg.scenarios = [Scenario.parse(s) for s in raw["scenarios"]]
    cfg.cassette = rel(raw.get("cassette"))
    cfg.cassette_mode = raw.get("cassette_mode", "off")
    cfg.parallelism = raw.get("parallelism")
    cfg.propagate = bool(raw.get("propagate", False))
    cfg.impute = bool(raw.get("impute", False))
    cfg.dot = bool(raw.get("dot", False))
    cfg.sources = list(raw.get("sources", []))

    # flags win over the file
    if getattr(args, "dataset", None):
        cfg.dataset = Path(args.dataset)
    if getattr(args, "output", None):
        cfg.output = Path(args.output)
    for item in getattr(args, "mock", None) or []:
        bid, _, rule = item.partition("=")
        cfg.backends[bid] = BackendConfig(bid, kind="mock", rule=rule or "echo")
    if getattr(args, "backend", None):
        cfg.select_backends = list(args.backend)
    if getattr(args, "scenario", None):
        try:
            cfg.scenarios = [Scenario.parse(s) for s in args.scenario]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "cassette", None):
        cfg.cassette = Path(args.cassette)
    if getattr(args, "cassette_mode", None):
        cfg.cassette_mode = args.cassette_mode
    if getattr(args, "parallelism", None):
        cfg.parallelism = args.parallelism
    if getattr(args, "propagate", False):
        cfg.propagate = True
    if getattr(args, "impute", False):
        cfg.impute = True
    if getattr(args, "dot", False):
        cfg.dot = True
    if getattr(args, "source", None):
        cfg.sources = list(args.source)

    if cfg.cassette_mode not in ("off", "record", "replay"):
        raise ConfigError(f"cassette mode must be off, record or replay, not {cfg.cassette_mode!r}")
    if cfg.cassette_mode != "off" and cfg.cassette is None:
        raise ConfigError(f"--{cfg.cassette_mode} needs --cassette <path>")
    if cfg.parallelism is not None and cfg.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    return cfg


def _need_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is None:
        raise ConfigError("no dataset given (use --dataset <root> or the config file)")
    return load_dataset(cfg.dataset)


def score_path(out: Path, backend_id: str, scenario: Scenario | str) -> Path:
    name = scenario.value if isinstance(scenario, Scenario) else scenario
    return out / f"scores_{backend_id}_{name}.jsonl"


# -- validate ------------------------------------------------------------------


def cmd_validate(cfg: RunConfig) -> int:
    if cfg.dataset is None:
        raise ConfigError("no dataset given (use --dataset <root> or the config file)")
    try:
        ds = load_dataset(cfg.dataset)
    except DatasetError as exc:
        for v in exc.violations:
            print(v)
        print(f"{len(exc.violations)} violation(s)")
        return EXIT_INVALID
    triplets = enumerate_triplets(ds)
    print(
        f"ok: {len(ds.questions)} questions, {len(ds.student_ids)} students, "
        f"{len(ds.graph.edges)} graph edges, {len({t.concept_link_id for t in triplets})} scored "
        f"concept links, {len(triplets)} triplets"
    )
    return EXIT_OK


# -- score ---------------------------------------------------------------------


def _score_line(result: Any, outcome: ParsedScore | ParseFailure | None) -> dict[str, Any]:
    d = result.to_dict()
    d["score"] = outcome.value if isinstance(outcome, ParsedScore) else None
    d["rule"] = outcome.rule.value if isinstance(outcome, ParsedScore) else None
    if result.error is not None:
        d["failure"] = "transport_error"
    elif isinstance(outcome, ParseFailure):
        d["failure"] = outcome.reason.value
    else:
        d["failure"] = None
    return d


def cmd_score(cfg: RunConfig) -> int:
    ds = _need_dataset(cfg)
    backends = cfg.selected()
    if not backends:
        raise ConfigError("no backends configured")
    triplets = enumerate_triplets(ds)

    # everything that can fail on configuration fails here, before any request
    if Scenario.DETAILED in cfg.scenarios:
        missing = sorted({t.concept_link_id for t in triplets} - {
            r.concept_link_id for r in ds.rubrics if r.scenario is Scenario.DETAILED
        })
        if missing:
            raise ConfigError(f"no Detailed rubric for concept link(s): {', '.join(missing)}")
    cassette = Cassette(cfg.cassette) if cfg.cassette_mode != "off" else None
    if cfg.cassette_mode == "replay" and not cfg.cassette.is_file():
        raise ConfigError(f"cassette not found: {cfg.cassette}")
    mode = {"off": "live", "record": "record", "replay": "replay"}[cfg.cassette_mode]
    gateways = []
    for bc in backends:
        gw = Gateway(bc, ds, cassette=cassette, mode=mode)
        if gw.mode != "replay" and bc.kind == "http_chat":
            gw.backend._headers()  # raises when the token variable is unset
        gateways.append(gw)

    cfg.output.mkdir(parents=True, exist_ok=True)
    for gw in gateways:
        for scenario in cfg.scenarios:
            results = gw.run_batch(triplets, scenario, ds, parallelism=cfg.parallelism)
            lines = []
            for r in results:
                outcome = parse_score(r.raw_text) if r.ok else None
                lines.append(json.dumps(_score_line(r, outcome), sort_keys=True, ensure_ascii=False))
            path = score_path(cfg.output, gw.config.backend_id, scenario)
            path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
            log.info("wrote %s (%d records)", path, len(lines))
    if cassette is not None and mode == "record":
        cassette.save()
    return EXIT_OK


def read_scores(path: Path) -> list[dict[str, Any]]:
    if not path.is_file():
        raise InputError(f"missing score file {path} (run `score` first)")
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines:
        raise InputError(f"empty score file {path}")
    return lines


def _outcome(line: dict[str, Any]) -> ParsedScore | ParseFailure:
    if line.get("score") is not None:
        return ParsedScore(int(line["score"]), Rule(line["rule"]))
    reason = line.get("failure")
    try:
        return ParseFailure(FailureReason(reason))
    except ValueError:  # transport errors never produced text to parse
        return ParseFailure(FailureReason.NO_SCORE_FOUND, str(line.get("error") or ""))


# -- aggregate -----------------------------------------------------------------


def _records_for(source: Source, cfg: RunConfig, ds: Dataset) -> list[ScoreRecord]:
    if source == HUMAN:
        if ds.ground_truth is None:
            raise InputError("dataset has no ground truth; the human source is unavailable")
        return [ScoreRecord(t, s, HUMAN) for t, s in ds.ground_truth.items()]
    out = []
    for line in read_scores(score_path(cfg.output, source.backend_id, source.scenario)):
        if line.get("score") is None:
            continue
        out.append(ScoreRecord(Triplet.from_dict(line), int(line["score"]), source, line.get("raw_text")))
    return out


def _default_sources(cfg: RunConfig, ds: Dataset) -> list[Source]:
    sources = [HUMAN] if ds.ground_truth is not None else []
    if cfg.select_backends:
        sources += [Source("model", b, s.value) for b in cfg.select_backends for s in cfg.scenarios]
    return sources


def _dot_subgraph(graph: ConceptGraph) -> str:
    annotated = ConceptGraph(graph.nodes, tuple(e for e in graph.edges if e.strength is not None))
    return export_dot(annotated, annotated=True)


def cmd_aggregate(cfg: RunConfig) -> int:
    ds = _need_dataset(cfg)
    try:
        sources = [Source.parse(s) for s in cfg.sources] if cfg.sources else _default_sources(cfg, ds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not sources:
        raise ConfigError("nothing to aggregate: no ground truth and no --source/--backend given")
    for source in sources:
        records = _records_for(source, cfg, ds)
        outdir = cfg.output / "mentalmodels" / source.slug
        outdir.mkdir(parents=True, exist_ok=True)
        for student in ds.student_ids:
            mine = [r for r in records if r.triplet.student_id == student]
            assignments = aggregate_strengths(mine, ds.qmap, ds.graph, student)
            graph = annotate_graph(ds.graph, assignments, propagate=cfg.propagate)
            write_mental_model(
                outdir / f"mentalmodel_{student}.json",
                mental_model_dict(student, source, assignments, graph),
            )
            if cfg.dot:
                (outdir / f"mentalmodel_{student}.dot").write_text(_dot_subgraph(graph), encoding="utf-8")
        log.info("source %s: %d mental models in %s", source, len(ds.student_ids), outdir)
    return EXIT_OK


# -- evaluate ------------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig) -> int:
    ds = _need_dataset(cfg)
    if ds.ground_truth is None:
        print(
            "error: the dataset has no ground truth. Add a \"ground_truth\" list of "
            "{student_id, question_id, concept_link_id, score} records to dataset.json.",
            file=sys.stderr,
        )
        return EXIT_INVALID
    backends = cfg.select_backends or sorted(cfg.backends)
    if not backends:
        raise ConfigError("no backends selected to evaluate")
    batches = {}
    for b in backends:
        for s in cfg.scenarios:
            batch = []
            for line in read_scores(score_path(cfg.output, b, s)):
                t = Triplet.from_dict(line)
                if t not in ds.ground_truth:
                    raise InputError(f"no ground truth for {t}")
                batch.append((_outcome(line), ds.ground_truth[t]))
            batches[(b, s.value)] = batch
    report = build_report(batches, impute=cfg.impute)
    text = render_text(report)
    cfg.output.mkdir(parents=True, exist_ok=True)
    (cfg.output / "report.csv").write_text(render_csv(report), encoding="utf-8")
    (cfg.output / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- fixtures ------------------------------------------------------------------


def cmd_fixtures_generate(args: argparse.Namespace) -> int:
    ds = generate_fixture(
        args.out,
        seed=args.seed,
        n_questions=args.questions,
        n_students=args.students,
        n_triplets=args.triplets,
    )
    print(
        f"wrote {args.out}: {len(ds.questions)} questions, {len(ds.student_ids)} students, "
        f"{len(enumerate_triplets(ds))} triplets"
    )
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--dataset", metavar="ROOT", help="dataset root holding dataset.json")
    p.add_argument("--output", metavar="DIR", help="directory for score, model and report files")


def _selection(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", action="append", metavar="ID", help="backend id (repeatable)")
    p.add_argument("--scenario", action="append", metavar="NAME", help="Base, Generic, Detailed or CoT (repeatable)")
    p.add_argument(
        "--mock",
        action="append",
        metavar="ID=RULE",
        help="define a mock backend inline, e.g. echo=echo or noisy=truth_plus_one",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptgrader", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a dataset and its concept graph")
    _common(p)

    p = sub.add_parser("score", help="score every triplet with each backend and scenario")
    _common(p)
    _selection(p)
    p.add_argument("--cassette", metavar="PATH", help="JSON-lines response cassette")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--record", dest="cassette_mode", action="store_const", const="record")
    mode.add_argument("--replay", dest="cassette_mode", action="store_const", const="replay")
    p.add_argument("--parallelism", type=int)

    p = sub.add_parser("aggregate", help="build per-student annotated concept graphs")
    _common(p)
    _selection(p)
    p.add_argument("--source", action="append", metavar="SRC", help="'human' or '<backend>:<scenario>'")
    p.add_argument("--propagate", action="store_true", help="fill unmapped higher-level edges")
    p.add_argument("--dot", action="store_true", help="also write DOT renderings")

    p = sub.add_parser("evaluate", help="compare model scores with ground truth")
    _common(p)
    _selection(p)
    p.add_argument("--impute", action="store_true", help="score parse failures as 3 instead of excluding them")

    p = sub.add_parser("fixtures", help="developer fixtures")
    fsub = p.add_subparsers(dest="fixtures_command", required=True)
    g = fsub.add_parser("generate", help="write a seeded synthetic dataset")
    g.add_argument("--out", required=True, metavar="DIR")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--questions", type=int, default=10)
    g.add_argument("--students", type=int, default=6)
    g.add_argument("--triplets", type=int, help="hit exactly this many triplets")
    return parser


_COMMANDS = {
    "validate": cmd_validate,
    "score": cmd_score,
    "aggregate": cmd_aggregate,
    "evaluate": cmd_evaluate,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fixtures":
            return cmd_fixtures_generate(args)
        return _COMMANDS[args.command](load_run_config(args))
    except (DatasetError, FixtureError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, CredentialError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConceptGraderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

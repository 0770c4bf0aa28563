"""Concept hierarchy, concept graph and the question -> concept-link map.

Nodes live at one of three levels (broad concept area, sub-concept area,
key concept link).  Edges are the concept links that get scored; an edge may
carry one strength value, which makes the graph a single student's annotated
copy.  Construction never validates: ``validate_graph`` returns violations as
data so a loader can report all of them at once.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ExportError, GraphError

MIN_SCORE = 1
MAX_SCORE = 5


class Level(str, enum.Enum):
    BCA = "BCA"
    SCA = "SCA"
    KCL = "KCL"

    @property
    def rank(self) -> int:
        return _LEVEL_RANK[self]


_LEVEL_RANK = {Level.KCL: 0, Level.SCA: 1, Level.BCA: 2}


def as_fraction(value: Any) -> Fraction | None:
    if value is None:
        return None
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("strength must be numeric, not bool")
    if isinstance(value, float):
        # repr keeps the shortest decimal that round-trips through JSON
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class ConceptNode:
    id: str
    label: str
    level: Level | str


@dataclass(frozen=True)
class ConceptEdge:
    id: str
    endpoints: tuple[str, ...]
    strength: Fraction | None = None
    label: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "endpoints", tuple(self.endpoints))
        object.__setattr__(self, "strength", as_fraction(self.strength))

    @property
    def pair(self) -> frozenset[str]:
        return frozenset(self.endpoints)


@dataclass(frozen=True)
class ConceptGraph:
    nodes: tuple[ConceptNode, ...] = ()
    edges: tuple[ConceptEdge, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.id)))

    def node(self, node_id: str) -> ConceptNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def edge(self, edge_id: str) -> ConceptEdge:
        for e in self.edges:
            if e.id == edge_id:
                return e
        raise KeyError(edge_id)

    @property
    def node_ids(self) -> set[str]:
        return {n.id for n in self.nodes}

    @property
    def edge_ids(self) -> set[str]:
        return {e.id for e in self.edges}

    def edge_name(self, edge_id: str) -> str:
        """Human-readable concept-link name, falling back to endpoint labels."""
        e = self.edge(edge_id)
        if e.label:
            return e.label
        labels = {n.id: n.label for n in self.nodes}
        return " - ".join(labels.get(x, x) for x in e.endpoints)

    def without_strengths(self) -> ConceptGraph:
        return ConceptGraph(self.nodes, tuple(replace(e, strength=None) for e in self.edges))

    def with_strengths(self, strengths: Mapping[str, Fraction | None]) -> ConceptGraph:
        edges = tuple(
            replace(e, strength=strengths[e.id]) if e.id in strengths else e for e in self.edges
        )
        return ConceptGraph(self.nodes, edges)

    def strengths(self) -> dict[str, Fraction]:
        return {e.id: e.strength for e in self.edges if e.strength is not None}

    def to_dict(self) -> dict[str, Any]:
        nodes = [
            {"id": n.id, "label": n.label, "level": getattr(n.level, "value", n.level)}
            for n in self.nodes
        ]
        edges = []
        for e in self.edges:
            d: dict[str, Any] = {"id": e.id, "endpoints": list(e.endpoints)}
            if e.label is not None:
                d["label"] = e.label
            d["strength"] = None if e.strength is None else float(e.strength)
            edges.append(d)
        return {"nodes": nodes, "edges": edges}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ConceptGraph:
        try:
            nodes = [
                ConceptNode(str(n["id"]), str(n.get("label", n["id"])), _parse_level(n["level"]))
                for n in data.get("nodes", [])
            ]
            edges = [
                ConceptEdge(
                    str(e["id"]),
                    tuple(str(x) for x in e["endpoints"]),
                    e.get("strength"),
                    e.get("label"),
                )
                for e in data.get("edges", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph data: {exc!r}") from exc
        return cls(tuple(nodes), tuple(edges))


def _parse_level(raw: Any) -> Level | str:
    try:
        return Level(raw)
    except ValueError:
        return str(raw)


def load_graph(path: str | Path) -> ConceptGraph:
    with open(path, encoding="utf-8") as f:
        return ConceptGraph.from_dict(json.load(f))


def save_graph(graph: ConceptGraph, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(graph.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


@dataclass(frozen=True, order=True)
class Violation:
    subject: str
    reason: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.reason}"


def validate_graph(graph: ConceptGraph) -> list[Violation]:
    """Return every structural problem in ``graph``, sorted by subject id."""
    out: list[Violation] = []
    seen_nodes: set[str] = set()
    for n in graph.nodes:
        if not n.id:
            out.append(Violation("<node>", "empty node id"))
        elif n.id in seen_nodes:
            out.append(Violation(n.id, "duplicate node id"))
        seen_nodes.add(n.id)
        if not isinstance(n.level, Level):
            out.append(Violation(n.id, f"unknown level {n.level!r}"))

    seen_edges: set[str] = set()
    pairs: dict[frozenset[str], str] = {}
    for e in graph.edges:
        if not e.id:
            out.append(Violation("<edge>", "empty edge id"))
        elif e.id in seen_edges:
            out.append(Violation(e.id, "duplicate edge id"))
        seen_edges.add(e.id)
        if len(e.endpoints) != 2:
            out.append(Violation(e.id, f"expected 2 endpoints, got {len(e.endpoints)}"))
            continue
        a, b = e.endpoints
        if a == b:
            out.append(Violation(e.id, f"self-loop on {a}"))
        for x in sorted({a, b}):
            if x not in seen_nodes:
                out.append(Violation(e.id, f"dangling endpoint {x}"))
        if e.strength is not None and not MIN_SCORE <= e.strength <= MAX_SCORE:
            out.append(Violation(e.id, f"strength {float(e.strength)} outside [1, 5]"))
        if e.pair in pairs:
            out.append(Violation(e.id, f"duplicate endpoint pair (also {pairs[e.pair]})"))
        else:
            pairs[e.pair] = e.id
    return sorted(out)


@dataclass(frozen=True)
class QuestionConceptMap:
    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "entries", {q: frozenset(v) for q, v in sorted(self.entries.items())}
        )

    def __contains__(self, question_id: object) -> bool:
        return question_id in self.entries

    @property
    def question_ids(self) -> list[str]:
        return list(self.entries)

    def to_dict(self) -> dict[str, list[str]]:
        return {q: sorted(v) for q, v in self.entries.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Iterable[str]]) -> QuestionConceptMap:
        return cls({str(q): frozenset(str(x) for x in v) for q, v in data.items()})


def links_for_question(qmap: QuestionConceptMap, question_id: str) -> frozenset[str]:
    try:
        return qmap.entries[question_id]
    except KeyError:
        raise KeyError(f"unknown question id {question_id!r}") from None


def validate_map(
    qmap: QuestionConceptMap, graph: ConceptGraph, question_ids: Iterable[str] = ()
) -> list[Violation]:
    out: list[Violation] = []
    edge_ids = graph.edge_ids
    for q, links in qmap.entries.items():
        if not links:
            out.append(Violation(q, "maps to no concept links"))
        for cl in sorted(links - edge_ids):
            out.append(Violation(q, f"unknown concept link {cl}"))
    for q in sorted(set(question_ids) - set(qmap.entries)):
        out.append(Violation(q, "question missing from concept-link map"))
    return sorted(out)


def _dot_str(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(graph: ConceptGraph, annotated: bool = False) -> str:
    """Render ``graph`` as undirected DOT, one cluster per level.

    With ``annotated`` every edge must carry a strength, printed with two
    decimals as the edge label.
    """
    if annotated:
        bare = [e.id for e in graph.edges if e.strength is None]
        if bare:
            raise ExportError(f"edges without strength: {', '.join(bare)}")

    lines = ["graph concept_graph {", "  node [shape=box];"]
    for level in (Level.BCA, Level.SCA, Level.KCL):
        members = [n for n in graph.nodes if n.level == level]
        if not members:
            continue
        lines.append(f"  subgraph cluster_{level.value} {{")
        lines.append(f"    label={_dot_str(level.value)};")
        for n in members:
            lines.append(f"    {_dot_str(n.id)} [label={_dot_str(n.label)}];")
        lines.append("  }")
    for e in graph.edges:
        a, b = e.endpoints
        attrs = [f"id={_dot_str(e.id)}"]
        if annotated:
            attrs.append(f"label={_dot_str(format(float(e.strength), '.2f'))}")
        lines.append(f"  {_dot_str(a)} -- {_dot_str(b)} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"

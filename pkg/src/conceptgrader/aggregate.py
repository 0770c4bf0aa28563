"""Per-student concept-link strengths and the annotated concept graph."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

from .concepts import MAX_SCORE, MIN_SCORE, ConceptGraph, Level, QuestionConceptMap
from .dataset import Triplet
from .errors import GraphError, InputError


@dataclass(frozen=True, order=True)
class Source:
    """Who produced a score: ``human`` or ``model`` (with backend and scenario)."""

    kind: str
    backend_id: str = ""
    scenario: str = ""

    def __str__(self) -> str:
        if self.kind == "human":
            return "human"
        return f"{self.backend_id}:{self.scenario}"

    @property
    def slug(self) -> str:
        return "human" if self.kind == "human" else f"{self.backend_id}_{self.scenario}"

    @classmethod
    def parse(cls, text: str) -> Source:
        if text == "human":
            return HUMAN
        backend, sep, scenario = text.partition(":")
        if not sep or not backend or not scenario:
            raise ValueError(f"source must be 'human' or '<backend>:<scenario>', got {text!r}")
        return cls("model", backend, scenario)


HUMAN = Source("human")


@dataclass(frozen=True)
class ScoreRecord:
    triplet: Triplet
    score: int
    source: Source = HUMAN
    raw_text: str | None = None

    def __post_init__(self) -> None:
        if isinstance(self.score, bool) or not MIN_SCORE <= self.score <= MAX_SCORE:
            raise ValueError(f"score out of range: {self.score!r}")


@dataclass(frozen=True)
class StrengthAssignment:
    student_id: str
    concept_link_id: str
    strength: Fraction
    support: tuple[tuple[str, int], ...]  # (question_id, score), sorted by question


def aggregate_strengths(
    records: Iterable[ScoreRecord],
    qmap: QuestionConceptMap,
    graph: ConceptGraph,
    student_id: str,
) -> list[StrengthAssignment]:
    """Average each concept link's scores over the questions it was scored on.

    Links with no record are left out; see ``uncovered_links``.
    """
    records = list(records)
    sources = {r.source for r in records}
    if len(sources) > 1:
        raise InputError(f"records mix sources: {sorted(map(str, sources))}")
    students = {r.triplet.student_id for r in records}
    if students - {student_id}:
        raise InputError(f"records for student {student_id} include others: {sorted(students - {student_id})}")

    edge_ids = graph.edge_ids
    by_link: dict[str, dict[str, int]] = defaultdict(dict)
    for r in records:
        t = r.triplet
        if t.concept_link_id not in qmap.entries.get(t.question_id, ()):
            raise InputError(f"{t.concept_link_id} is not mapped to question {t.question_id}")
        if t.concept_link_id not in edge_ids:
            raise InputError(f"unknown concept link {t.concept_link_id}")
        if t.question_id in by_link[t.concept_link_id]:
            raise InputError(f"duplicate record for {t}")
        by_link[t.concept_link_id][t.question_id] = r.score

    out = []
    for link in sorted(by_link):
        support = tuple(sorted(by_link[link].items()))
        strength = Fraction(sum(s for _, s in support), len(support))
        out.append(StrengthAssignment(student_id, link, strength, support))
    return out


def uncovered_links(graph: ConceptGraph, assignments: Sequence[StrengthAssignment]) -> list[str]:
    covered = {a.concept_link_id for a in assignments}
    return sorted(graph.edge_ids - covered)


def edge_tier(graph: ConceptGraph, edge_id: str) -> int:
    """Hierarchy tier of an edge: the highest level among its endpoints."""
    levels = {n.id: n.level for n in graph.nodes}
    return max(Level(levels[x]).rank for x in graph.edge(edge_id).endpoints)


def annotate_graph(
    graph: ConceptGraph,
    assignments: Sequence[StrengthAssignment],
    propagate: bool = False,
) -> ConceptGraph:
    """Copy of ``graph`` whose edges carry the assigned strengths.

    Existing strengths on the input are discarded, so the result depends only
    on ``assignments``.  With ``propagate``, edges are visited tier by tier
    (KCL, SCA, BCA); an edge still without a strength takes the mean strength
    of the lower-tier edges sharing a node with it, including ones filled
    earlier in the same pass.
    """
    edge_ids = graph.edge_ids
    strengths: dict[str, Fraction] = {}
    for a in assignments:
        if a.concept_link_id not in edge_ids:
            raise GraphError(f"assignment references unknown edge {a.concept_link_id}")
        strengths[a.concept_link_id] = a.strength

    if propagate and strengths:
        tiers = {e.id: edge_tier(graph, e.id) for e in graph.edges}
        for tier in sorted(set(tiers.values())):
            for e in graph.edges:
                if tiers[e.id] != tier or e.id in strengths:
                    continue
                below = [
                    strengths[o.id]
                    for o in graph.edges
                    if o.id in strengths and tiers[o.id] < tier and o.pair & e.pair
                ]
                if below:
                    strengths[e.id] = Fraction(sum(below), len(below))

    return graph.without_strengths().with_strengths(strengths)


def mental_model_dict(
    student_id: str,
    source: Source,
    assignments: Sequence[StrengthAssignment],
    annotated: ConceptGraph,
) -> dict[str, Any]:
    assigned = {a.concept_link_id for a in assignments}
    return {
        "student_id": student_id,
        "source": str(source),
        "assignments": [
            {
                "concept_link_id": a.concept_link_id,
                "strength": float(a.strength),
                "strength_exact": f"{a.strength.numerator}/{a.strength.denominator}",
                "support": [{"question_id": q, "score": s} for q, s in a.support],
            }
            for a in assignments
        ],
        "inferred": {
            e.id: float(e.strength)
            for e in annotated.edges
            if e.strength is not None and e.id not in assigned
        },
        "uncovered": uncovered_links(annotated, assignments),
        "graph": annotated.to_dict(),
    }


def write_mental_model(path: str | Path, model: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(model, indent=2, sort_keys=True) + "\n", encoding="utf-8")

"""Seeded synthetic assessment on the vectors topic.

The concept graph, rubrics, answers and ground-truth scores are invented;
only the shape (10 questions, 6 students, 12 scored concept links) follows
the study this toolkit was built for.  Images are tiny distinct PNG files so
hashing and attachment behave as with real scans.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .concepts import ConceptEdge, ConceptGraph, ConceptNode, Level, QuestionConceptMap
from .dataset import (
    GENERIC_SCALE,
    Dataset,
    ImageRef,
    Question,
    Rubric,
    Scenario,
    StudentAnswer,
    Triplet,
    enumerate_triplets,
    save_dataset,
    sha256_file,
)
from .errors import ConceptGraderError


class FixtureError(ConceptGraderError):
    pass


_NODES = [
    ("B1", "Addition of vectors", Level.BCA),
    ("B2", "Resolution of vectors", Level.BCA),
    ("S1", "Triangle law", Level.SCA),
    ("S2", "Parallelogram law", Level.SCA),
    ("S3", "Rectangular components", Level.SCA),
    ("S4", "Resultant of several vectors", Level.SCA),
    ("K1", "Direction of vectors", Level.KCL),
    ("K2", "Magnitude of vectors", Level.KCL),
    ("K3", "Angle between vectors", Level.KCL),
    ("K4", "Representation of vectors", Level.KCL),
    ("K5", "Sine and cosine components", Level.KCL),
    ("K6", "Unit vectors", Level.KCL),
]

# the twelve scored concept links, all KCL-SCA
_LINKS = [
    ("CL01", ("K1", "S1"), "direction of vectors in the triangle law"),
    ("CL02", ("K2", "S1"), "magnitude of vectors"),
    ("CL03", ("K1", "S2"), "direction of the resultant in the parallelogram law"),
    ("CL04", ("K2", "S2"), "magnitude of the resultant in the parallelogram law"),
    ("CL05", ("K3", "S2"), "angle between vectors in the parallelogram law"),
    ("CL06", ("K4", "S1"), "head-to-tail representation of vectors"),
    ("CL07", ("K3", "S3"), "angle used in resolving a vector"),
    ("CL08", ("K5", "S3"), "sine and cosine components of a vector"),
    ("CL09", ("K6", "S3"), "unit vectors along the axes"),
    ("CL10", ("K2", "S3"), "magnitude from rectangular components"),
    ("CL11", ("K4", "S4"), "representing several vectors in one diagram"),
    ("CL12", ("K1", "S4"), "direction of the resultant of several vectors"),
]

# hierarchy edges; never mapped to a question, filled only by propagation
_HIERARCHY = [
    ("H01", ("S1", "B1")),
    ("H02", ("S2", "B1")),
    ("H03", ("S4", "B1")),
    ("H04", ("S3", "B2")),
]

_MAGNITUDE_RUBRIC = {
    1: "(No indication of understanding regarding the manipulation of magnitudes)",
    2: "(Very limited understanding of magnitudes)",
    3: "(No ability to dynamically simulate vectors)",
    4: "(Partial conceptual understanding of vector manipulation)",
    5: "(Strong conceptual understanding of vector manipulation)",
}


def fixture_graph() -> ConceptGraph:
    nodes = tuple(ConceptNode(i, label, level) for i, label, level in _NODES)
    edges = [ConceptEdge(i, ends, None, label) for i, ends, label in _LINKS]
    edges += [ConceptEdge(i, ends) for i, ends in _HIERARCHY]
    return ConceptGraph(nodes, tuple(edges))


def scored_link_ids() -> list[str]:
    return [i for i, _, _ in _LINKS]


def detailed_rubric(link_id: str, label: str) -> dict[int, str]:
    if link_id == "CL02":
        return dict(_MAGNITUDE_RUBRIC)
    return {
        1: f"(No indication of handling {label})",
        2: f"(Very limited familiarity with {label})",
        3: f"(Reproduces the textbook treatment of {label} without adapting it)",
        4: f"(Partial conceptual understanding of {label}, with some deviations)",
        5: f"(Strong conceptual understanding of {label})",
    }


def tiny_png(tag: str) -> bytes:
    """A valid 1x1 PNG whose bytes are unique per ``tag``."""

    def chunk(kind: bytes, data: bytes) -> bytes:
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    shade = zlib.crc32(tag.encode()) & 0xFF
    ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 0, 0, 0, 0)
    idat = zlib.compress(bytes([0, shade]))
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"tEXt", b"Comment\x00" + tag.encode())
        + chunk(b"IDAT", idat)
        + chunk(b"IEND", b"")
    )


def max_triplets(n_questions: int, n_students: int, n_links: int = len(_LINKS)) -> int:
    return n_questions * n_students * n_links


def _drop_set(weights: list[int], target: int, rng: np.random.Generator) -> list[int] | None:
    """Indices whose weights sum to exactly ``target`` (subset sum), or None."""
    order = list(rng.permutation(len(weights)))
    reach: dict[int, tuple[int, int] | None] = {0: None}  # sum -> (previous sum, item)
    for i in order:
        w = weights[i]
        for s in sorted(reach, reverse=True):
            t = s + w
            if t <= target and t not in reach:
                reach[t] = (s, i)
        if target in reach:
            break
    if target not in reach:
        return None
    picked = []
    s = target
    while reach[s] is not None:
        prev, i = reach[s]
        picked.append(i)
        s = prev
    return picked


def _plan(
    rng: np.random.Generator,
    qids: list[str],
    sids: list[str],
    links: list[str],
    n_triplets: int | None,
    answer_rate: float,
) -> tuple[dict[str, list[str]], set[tuple[str, str]]]:
    n_links = len(links)
    if n_triplets is not None:
        cap = max_triplets(len(qids), len(sids), n_links)
        if n_triplets > cap:
            raise FixtureError(
                f"{n_triplets} triplets is infeasible: {len(qids)} questions x {len(sids)} "
                f"students x {n_links} concept links allow at most {cap} distinct triplets"
            )
        if n_triplets < 1:
            raise FixtureError("need at least one triplet")

    pairs = [(q, s) for s in sids for q in qids]
    for _ in range(200):
        sizes = {q: int(rng.integers(1, 5)) for q in qids}
        if n_triplets is not None:
            # one single-link question keeps small remainders reachable
            spare = qids[int(rng.integers(len(qids)))]
            sizes[spare] = 1
            while len(sids) * sum(sizes.values()) < n_triplets:
                open_ = [q for q in qids if sizes[q] < n_links and q != spare] or [spare]
                q = open_[int(rng.integers(len(open_)))]
                sizes[q] += 1

        qmap = {q: sorted(rng.choice(links, size=sizes[q], replace=False).tolist()) for q in qids}
        # every scored link appears on at least one question
        for link in links:
            if not any(link in v for v in qmap.values()):
                q = min(qids, key=lambda x: (len(qmap[x]) >= n_links, len(qmap[x]), x))
                if len(qmap[q]) < n_links:
                    qmap[q] = sorted(qmap[q] + [link])

        if n_triplets is None:
            answered = {p for p in pairs if rng.random() < answer_rate}
            for s in sids:
                if not any(ps == s for _, ps in answered):
                    answered.add((qids[int(rng.integers(len(qids)))], s))
            return qmap, answered

        weights = [len(qmap[q]) for q, _ in pairs]
        excess = sum(weights) - n_triplets
        drop = _drop_set(weights, excess, rng) if excess else []
        if drop is not None:
            dropped = set(drop)
            return qmap, {p for i, p in enumerate(pairs) if i not in dropped}
    raise FixtureError(f"could not construct a fixture with exactly {n_triplets} triplets")


def generate_fixture(
    root: str | Path,
    seed: int = 0,
    n_questions: int = 10,
    n_students: int = 6,
    n_triplets: int | None = None,
    answer_rate: float = 0.9,
) -> Dataset:
    """Write a synthetic dataset under ``root`` and return it.

    With ``n_triplets`` the question-link map and the set of answered
    questions are chosen so that exactly that many triplets exist;
    ``FixtureError`` is raised when the count cannot be reached.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    graph = fixture_graph()
    links = scored_link_ids()
    qids = [f"Q{i:02d}" for i in range(1, n_questions + 1)]
    sids = [f"ST{i:02d}" for i in range(1, n_students + 1)]
    qmap, answered = _plan(rng, qids, sids, links, n_triplets, answer_rate)

    images = root / "images"
    images.mkdir(parents=True, exist_ok=True)

    def image(name: str) -> ImageRef:
        rel = f"images/{name}.png"
        (root / rel).write_bytes(tiny_png(f"{seed}:{name}"))
        return ImageRef(rel, sha256_file(root / rel))

    labels = {e.id: graph.edge_name(e.id) for e in graph.edges}
    questions = [
        Question(
            q,
            f"Question {q}: reason about {', '.join(labels[cl] for cl in qmap[q])} using the diagram.",
            (image(f"{q.lower()}_diagram"),),
        )
        for q in qids
    ]

    answers = []
    for s in sids:
        for q in qids:
            if (q, s) not in answered:
                continue
            kind = rng.random()
            refs: tuple[ImageRef, ...] = ()
            text = None
            if kind < 0.75:
                refs = (image(f"{q.lower()}_{s.lower()}"),)
            if kind >= 0.5:
                text = f"Student {s} answer to {q}: the resultant follows from the vector diagram."
            answers.append(StudentAnswer(q, s, text, refs))

    rubrics = [
        Rubric(Scenario.BASE, {}),
        Rubric(Scenario.GENERIC, dict(GENERIC_SCALE)),
        Rubric(Scenario.COT, dict(GENERIC_SCALE)),
    ]
    rubrics += [Rubric(Scenario.DETAILED, detailed_rubric(cl, labels[cl]), cl) for cl in links]

    ds = Dataset(
        root=root,
        graph=graph,
        qmap=QuestionConceptMap({q: frozenset(v) for q, v in qmap.items()}),
        questions=tuple(questions),
        answers=tuple(answers),
        rubrics=tuple(rubrics),
    )

    ability = {s: float(rng.uniform(1.8, 4.2)) for s in sids}
    difficulty = {cl: float(rng.normal(0.0, 0.5)) for cl in links}
    truth: dict[Triplet, int] = {}
    for t in enumerate_triplets(ds):
        mu = ability[t.student_id] - difficulty[t.concept_link_id]
        truth[t] = int(np.clip(np.rint(rng.normal(mu, 0.9)), 1, 5))

    ds = Dataset(
        root=root,
        graph=ds.graph,
        qmap=ds.qmap,
        questions=ds.questions,
        answers=ds.answers,
        rubrics=ds.rubrics,
        ground_truth=truth,
    )
    save_dataset(ds, root)
    return ds

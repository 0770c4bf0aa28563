"""
From per-question scores to a student's mental model
====================================================

Scores for the same concept link on different questions are averaged.  The
optional propagation step fills higher-level edges from the links below them.
"""

import tempfile
from pathlib import Path

import numpy as np

from conceptgrader.aggregate import HUMAN, ScoreRecord, aggregate_strengths, annotate_graph, uncovered_links
from conceptgrader.concepts import export_dot
from conceptgrader.dataset import load_dataset
from conceptgrader.fixtures import generate_fixture

root = Path(tempfile.mkdtemp()) / "fixture"
generate_fixture(root, seed=0)
ds = load_dataset(root)

student = ds.student_ids[0]
records = [ScoreRecord(t, s, HUMAN) for t, s in ds.ground_truth.items() if t.student_id == student]
assignments = aggregate_strengths(records, ds.qmap, ds.graph, student)
for a in assignments:
    print(a.concept_link_id, a.strength, "from", a.support)
print("not measured:", uncovered_links(ds.graph, assignments))

graph = annotate_graph(ds.graph, assignments, propagate=True)
shown = type(graph)(graph.nodes, tuple(e for e in graph.edges if e.strength is not None))
print(export_dot(shown, annotated=True))

# class-wide view: mean strength per link across all students
per_link = {}
for s in ds.student_ids:
    recs = [ScoreRecord(t, v, HUMAN) for t, v in ds.ground_truth.items() if t.student_id == s]
    for a in aggregate_strengths(recs, ds.qmap, ds.graph, s):
        per_link.setdefault(a.concept_link_id, []).append(float(a.strength))
for link, values in sorted(per_link.items()):
    print(f"{link}: mean {np.mean(values):.2f} over {len(values)} students")

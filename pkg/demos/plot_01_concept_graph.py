"""
A concept graph for vector addition
===================================

Nodes sit at three levels (broad areas, sub-areas, key concepts) and every
edge is a concept link that can later carry a strength score.
"""

from fractions import Fraction

from conceptgrader.concepts import export_dot, validate_graph
from conceptgrader.fixtures import fixture_graph

graph = fixture_graph()
print(len(graph.nodes), "nodes,", len(graph.edges), "edges")

# the validator returns violations as data; an empty list means valid
print("violations:", validate_graph(graph))

# edges get a human-readable name used inside prompts
for e in graph.edges[:3]:
    print(e.id, "->", graph.edge_name(e.id))

# annotate two links and render the graph with strength labels
annotated = graph.without_strengths().with_strengths({"CL01": Fraction(7, 2), "CL02": Fraction(4)})
subset = type(graph)(graph.nodes, tuple(e for e in annotated.edges if e.strength is not None))
print(export_dot(subset, annotated=True))

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptgrader.concepts import (
    ConceptEdge,
    ConceptGraph,
    ConceptNode,
    Level,
    QuestionConceptMap,
    export_dot,
    links_for_question,
    load_graph,
    save_graph,
    validate_graph,
)
from conceptgrader.errors import ExportError
from conceptgrader.fixtures import fixture_graph

from .dotreader import parse_dot


def two_node_graph(strength=None):
    return ConceptGraph(
        (ConceptNode("K1", "Direction", Level.KCL), ConceptNode("S1", "Triangle law", Level.SCA)),
        (ConceptEdge("E1", ("K1", "S1"), strength),),
    )


def hand_validate(graph_dict):
    """Independent check of the graph-file invariants, written against the raw JSON."""
    problems = []
    ids = [n["id"] for n in graph_dict["nodes"]]
    if len(ids) != len(set(ids)) or any(not i for i in ids):
        problems.append("node ids")
    if any(n["level"] not in ("BCA", "SCA", "KCL") for n in graph_dict["nodes"]):
        problems.append("levels")
    eids = [e["id"] for e in graph_dict["edges"]]
    if len(eids) != len(set(eids)):
        problems.append("edge ids")
    pairs = set()
    for e in graph_dict["edges"]:
        a, b = e["endpoints"]
        if a == b or a not in ids or b not in ids:
            problems.append(f"endpoints {e['id']}")
        if frozenset((a, b)) in pairs:
            problems.append(f"pair {e['id']}")
        pairs.add(frozenset((a, b)))
        s = e["strength"]
        if s is not None and not 1 <= s <= 5:
            problems.append(f"strength {e['id']}")
    return problems


def test_empty_graph_is_valid():
    assert validate_graph(ConceptGraph()) == []


def test_dangling_endpoint_reported():
    g = ConceptGraph(
        (ConceptNode("A", "a", Level.KCL),),
        (ConceptEdge("E1", ("A", "X")),),
    )
    report = validate_graph(g)
    assert len(report) == 1
    assert "dangling endpoint X" in str(report[0])


def test_fixture_graph_valid_by_both_validators():
    g = fixture_graph()
    assert validate_graph(g) == []
    assert hand_validate(g.to_dict()) == []
    scored = [e for e in g.edges if e.id.startswith("CL")]
    assert len(scored) == 12


def test_violations_cover_each_invariant():
    g = ConceptGraph(
        (
            ConceptNode("A", "a", Level.KCL),
            ConceptNode("A", "dup", Level.SCA),
            ConceptNode("B", "b", "XYZ"),
        ),
        (
            ConceptEdge("E1", ("A", "A")),
            ConceptEdge("E2", ("A", "B"), 7),
            ConceptEdge("E3", ("B", "A")),
        ),
    )
    text = [str(v) for v in validate_graph(g)]
    assert "A: duplicate node id" in text
    assert "B: unknown level 'XYZ'" in text
    assert "E1: self-loop on A" in text
    assert any(t.startswith("E2: strength 7.0") for t in text)
    assert "E3: duplicate endpoint pair (also E2)" in text
    assert text == sorted(text)


def test_fractional_strength_allowed():
    assert validate_graph(two_node_graph(Fraction(4, 3))) == []


def test_links_for_question():
    qmap = QuestionConceptMap({"Q1": {"CL2"}, "Q2": {"CL2", "CL5"}})
    assert links_for_question(qmap, "Q2") == {"CL2", "CL5"}
    assert links_for_question(qmap, "Q1") == {"CL2"}
    with pytest.raises(KeyError, match="Q9"):
        links_for_question(qmap, "Q9")


def test_export_dot_annotated_label():
    dot = export_dot(two_node_graph(Fraction(7, 2)), annotated=True)
    assert 'label="3.50"' in dot
    nodes, edges = parse_dot(dot)
    assert set(nodes) == {"K1", "S1"}
    assert edges == [("K1", "S1", {"id": "E1", "label": "3.50"})]


def test_export_dot_unannotated_has_no_edge_labels():
    dot = export_dot(two_node_graph(Fraction(7, 2)), annotated=False)
    _, edges = parse_dot(dot)
    assert all("label" not in attrs for _, _, attrs in edges)


def test_export_dot_missing_strength():
    g = fixture_graph()
    with pytest.raises(ExportError) as exc:
        export_dot(g, annotated=True)
    assert "CL01" in str(exc.value) and "H04" in str(exc.value)


def test_export_dot_deterministic_and_grouped():
    g = fixture_graph()
    a, b = export_dot(g), export_dot(g)
    assert a == b
    assert a.index("cluster_BCA") < a.index("cluster_SCA") < a.index("cluster_KCL")
    nodes, edges = parse_dot(a)
    assert set(nodes) == g.node_ids
    assert len(edges) == len(g.edges)


def test_dot_escapes_quotes():
    g = ConceptGraph((ConceptNode("A", 'say "hi"', Level.KCL), ConceptNode("B", "b", Level.SCA)), ())
    nodes, _ = parse_dot(export_dot(g))
    assert nodes["A"]["label"] == 'say "hi"'


def test_graph_json_round_trip(tmp_path):
    g = fixture_graph().with_strengths({"CL01": Fraction(4, 3), "CL02": Fraction(5)})
    save_graph(g, tmp_path / "g.json")
    back = load_graph(tmp_path / "g.json")
    assert back.to_dict() == g.to_dict()
    assert back.edge("CL02").strength == 5


_ids = st.sampled_from(["A", "B", "C", "D", ""])


@st.composite
def graphs(draw):
    nodes = draw(
        st.lists(
            st.builds(ConceptNode, _ids, st.just("n"), st.sampled_from(list(Level) + ["bad"])),
            max_size=5,
        )
    )
    edges = draw(
        st.lists(
            st.builds(
                ConceptEdge,
                st.sampled_from(["E1", "E2", "E3"]),
                st.tuples(_ids, _ids),
                st.one_of(st.none(), st.fractions(min_value=0, max_value=6)),
            ),
            max_size=5,
        )
    )
    return ConceptGraph(tuple(nodes), tuple(edges))


@settings(max_examples=200, deadline=None)
@given(graphs())
def test_validate_is_pure_and_sound(g):
    first = validate_graph(g)
    assert first == validate_graph(g)
    if not first:
        ids = {n.id for n in g.nodes}
        for e in g.edges:
            assert set(e.endpoints) <= ids
        assert all(isinstance(n.level, Level) for n in g.nodes)
        assert hand_validate(g.to_dict()) == []


@settings(max_examples=100, deadline=None)
@given(graphs())
def test_export_of_valid_graph_parses(g):
    if validate_graph(g):
        return
    nodes, edges = parse_dot(export_dot(g))
    assert len(edges) == len(g.edges)

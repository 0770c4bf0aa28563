import json
import random
import shutil

import pytest

from conceptgrader.concepts import ConceptEdge, ConceptGraph, ConceptNode, Level, QuestionConceptMap
from conceptgrader.dataset import (
    MANIFEST,
    Dataset,
    Question,
    StudentAnswer,
    Triplet,
    dataset_from_dict,
    dumps_manifest,
    enumerate_triplets,
    load_dataset,
    save_dataset,
)
from conceptgrader.errors import DatasetError, InputError


def copy_fixture(src, tmp_path):
    dst = tmp_path / "ds"
    shutil.copytree(src, dst)
    return dst


def edit_manifest(root, fn):
    path = root / MANIFEST
    data = json.loads(path.read_text())
    fn(data)
    path.write_text(json.dumps(data))


def test_fixture_counts(fixture_ds):
    assert len(fixture_ds.questions) == 10
    assert len(fixture_ds.student_ids) == 6
    scored = {cl for links in fixture_ds.qmap.entries.values() for cl in links}
    assert len(scored) == 12


def test_score_out_of_range(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    edit_manifest(root, lambda d: d["ground_truth"][0].update(score=7))
    with pytest.raises(DatasetError) as exc:
        load_dataset(root)
    assert any("score out of range" in v for v in exc.value.violations)


def test_missing_image_named(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    (root / "images" / "q01_st01.png").unlink()
    with pytest.raises(DatasetError) as exc:
        load_dataset(root)
    assert any("images/q01_st01.png" in v for v in exc.value.violations)


def test_hash_mismatch(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    (root / "images" / "q01_diagram.png").write_bytes(b"tampered")
    with pytest.raises(DatasetError) as exc:
        load_dataset(root)
    assert any("hash mismatch" in v and "q01_diagram.png" in v for v in exc.value.violations)


def test_all_violations_reported(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)

    def break_it(d):
        d["ground_truth"][0]["score"] = 0
        d["answers"][0]["question_id"] = "Q99"

    edit_manifest(root, break_it)
    (root / "images" / "q01_diagram.png").unlink()
    with pytest.raises(DatasetError) as exc:
        load_dataset(root)
    text = "\n".join(exc.value.violations)
    assert "score out of range" in text
    assert "dangling question id Q99" in text
    assert "missing image file images/q01_diagram.png" in text


def test_missing_root(tmp_path):
    with pytest.raises(InputError):
        load_dataset(tmp_path / "nope")
    with pytest.raises(InputError):
        load_dataset(tmp_path)


def test_round_trip_byte_identical(fixture_ds, tmp_path):
    save_dataset(fixture_ds, tmp_path / "a")
    again = load_dataset(tmp_path / "a")
    save_dataset(again, tmp_path / "b")
    assert (tmp_path / "a" / MANIFEST).read_bytes() == (tmp_path / "b" / MANIFEST).read_bytes()
    assert dumps_manifest(again) == dumps_manifest(fixture_ds)
    assert enumerate_triplets(again) == enumerate_triplets(fixture_ds)


def test_permuted_manifest(fixture_root):
    data = json.loads((fixture_root / MANIFEST).read_text())
    base, _ = dataset_from_dict(data, fixture_root)
    rng = random.Random(11)
    for _ in range(5):
        for key in ("questions", "answers", "ground_truth", "rubrics"):
            rng.shuffle(data[key])
        for links in data["question_concept_map"].values():
            rng.shuffle(links)
        ds, errors = dataset_from_dict(data, fixture_root)
        assert errors == []
        assert enumerate_triplets(ds) == enumerate_triplets(base)


def test_triplet_count_formula(fixture_ds):
    expected = sum(len(fixture_ds.qmap.entries[a.question_id]) for a in fixture_ds.answers)
    assert len(enumerate_triplets(fixture_ds)) == expected


def test_canonical_order(fixture_ds):
    ts = enumerate_triplets(fixture_ds)
    keys = [(t.student_id, t.question_id, t.concept_link_id) for t in ts]
    assert keys == sorted(keys)
    assert len(set(ts)) == len(ts)


def small_dataset(tmp_path, answered):
    graph = ConceptGraph(
        (ConceptNode("K1", "a", Level.KCL), ConceptNode("K2", "b", Level.KCL), ConceptNode("S", "s", Level.SCA)),
        (ConceptEdge("CL1", ("K1", "S")), ConceptEdge("CL2", ("K2", "S"))),
    )
    qmap = QuestionConceptMap({"Q1": {"CL1", "CL2"}, "Q2": {"CL1"}, "Q3": {"CL2"}})
    questions = tuple(Question(q, f"text {q}", ()) for q in ("Q1", "Q2", "Q3"))
    answers = tuple(StudentAnswer(q, s, "ans", ()) for s, q in answered)
    return Dataset(tmp_path, graph, qmap, questions, answers, ())


def test_three_triplets(tmp_path):
    ds = small_dataset(tmp_path, [("s1", "Q1"), ("s1", "Q2")])
    assert enumerate_triplets(ds) == [
        Triplet("s1", "Q1", "CL1"),
        Triplet("s1", "Q1", "CL2"),
        Triplet("s1", "Q2", "CL1"),
    ]


def test_missing_answer_drops_triplets(tmp_path):
    ds = small_dataset(tmp_path, [("s1", "Q1"), ("s1", "Q3"), ("s2", "Q1")])
    ts = enumerate_triplets(ds)
    assert Triplet("s1", "Q3", "CL2") in ts
    assert not any(t.student_id == "s2" and t.question_id == "Q3" for t in ts)

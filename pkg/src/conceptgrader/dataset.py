"""Assessment data: questions, answers, rubrics, triplets and ground truth.

A dataset lives in a directory holding ``dataset.json`` plus the image files
it references under ``images/``.  Images are opaque bytes identified by their
sha256; nothing here ever decodes them.
"""

from __future__ import annotations

import enum
import hashlib
import json
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .concepts import (
    MAX_SCORE,
    MIN_SCORE,
    ConceptGraph,
    QuestionConceptMap,
    Violation,
    validate_graph,
    validate_map,
)
from .errors import DatasetError, InputError

MANIFEST = "dataset.json"
DEFAULT_TOPIC = "addition and resolution of vectors from 11th standard"

# Exact line bodies of the shared five-point scale, trailing spaces included.
GENERIC_SCALE: dict[int, str] = {
    1: "(No indication of ability to handle the link) ",
    2: "(Very little familiarity with the skill)  ",
    3: "(Inconsistent Procedure) Trying to impose the text book understanding without any modification. ",
    4: "(Inconsistent Concept/ Procedure- applying with some changes from a regular textbook usage) ",
    5: "(Strong Conceptual)",
}


class Scenario(str, enum.Enum):
    BASE = "Base"
    GENERIC = "Generic"
    DETAILED = "Detailed"
    COT = "CoT"

    @classmethod
    def parse(cls, name: str) -> Scenario:
        for s in cls:
            if s.value.lower() == str(name).lower():
                return s
        raise ValueError(f"unknown scenario {name!r}; expected one of {[s.value for s in cls]}")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class ImageRef:
    path: str  # relative to the dataset root
    sha256: str

    def resolve(self, root: str | Path) -> Path:
        return Path(root) / self.path

    def to_dict(self) -> dict[str, str]:
        return {"path": self.path, "sha256": self.sha256}


@dataclass(frozen=True)
class Question:
    id: str
    text: str = ""
    image_refs: tuple[ImageRef, ...] = ()


@dataclass(frozen=True)
class StudentAnswer:
    question_id: str
    student_id: str
    text: str | None = None
    image_refs: tuple[ImageRef, ...] = ()


@dataclass(frozen=True)
class Rubric:
    scenario: Scenario
    scale: Mapping[int, str] = field(default_factory=dict)
    concept_link_id: str | None = None


@dataclass(frozen=True, order=True)
class Triplet:
    """One scoring unit.  Field order is the canonical sort order."""

    student_id: str
    question_id: str
    concept_link_id: str

    def to_dict(self) -> dict[str, str]:
        return {
            "student_id": self.student_id,
            "question_id": self.question_id,
            "concept_link_id": self.concept_link_id,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Triplet:
        return cls(str(d["student_id"]), str(d["question_id"]), str(d["concept_link_id"]))


@dataclass(frozen=True)
class GroundTruthRecord:
    triplet: Triplet
    score: int


@dataclass(frozen=True)
class OcrRecord:
    """A transcription attached to an image, with where it came from."""

    image_sha256: str
    text: str
    backend_id: str
    prompt_hash: str


@dataclass(frozen=True)
class Dataset:
    root: Path
    graph: ConceptGraph
    qmap: QuestionConceptMap
    questions: tuple[Question, ...]
    answers: tuple[StudentAnswer, ...]
    rubrics: tuple[Rubric, ...]
    ground_truth: Mapping[Triplet, int] | None = None
    topic: str = DEFAULT_TOPIC
    ocr: tuple[OcrRecord, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "questions", tuple(sorted(self.questions, key=lambda q: q.id)))
        object.__setattr__(
            self,
            "answers",
            tuple(sorted(self.answers, key=lambda a: (a.student_id, a.question_id))),
        )
        object.__setattr__(self, "rubrics", tuple(sorted(self.rubrics, key=_rubric_key)))
        object.__setattr__(self, "ocr", tuple(sorted(self.ocr, key=lambda r: r.image_sha256)))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", dict(sorted(self.ground_truth.items())))

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(question_id)

    def answer(self, question_id: str, student_id: str) -> StudentAnswer:
        for a in self.answers:
            if a.question_id == question_id and a.student_id == student_id:
                return a
        raise KeyError((question_id, student_id))

    @property
    def student_ids(self) -> list[str]:
        return sorted({a.student_id for a in self.answers})

    def rubric(self, scenario: Scenario, concept_link_id: str | None = None) -> Rubric | None:
        for r in self.rubrics:
            if r.scenario is scenario and (
                scenario is not Scenario.DETAILED or r.concept_link_id == concept_link_id
            ):
                return r
        return None


def _rubric_key(r: Rubric) -> tuple[str, str]:
    return (r.scenario.value, r.concept_link_id or "")


def enumerate_triplets(dataset: Dataset) -> list[Triplet]:
    """All (student, question, link) units: every mapped link of every answered question."""
    out = [
        Triplet(a.student_id, a.question_id, cl)
        for a in dataset.answers
        for cl in dataset.qmap.entries.get(a.question_id, ())
    ]
    return sorted(out)


# -- (de)serialisation -------------------------------------------------------


def _images_to_list(refs: Iterable[ImageRef]) -> list[dict[str, str]]:
    return [r.to_dict() for r in refs]


def dataset_to_dict(ds: Dataset) -> dict[str, Any]:
    d: dict[str, Any] = {
        "topic": ds.topic,
        "graph": ds.graph.to_dict(),
        "question_concept_map": ds.qmap.to_dict(),
        "questions": [
            {"id": q.id, "text": q.text, "images": _images_to_list(q.image_refs)}
            for q in ds.questions
        ],
        "answers": [
            {
                "question_id": a.question_id,
                "student_id": a.student_id,
                "text": a.text,
                "images": _images_to_list(a.image_refs),
            }
            for a in ds.answers
        ],
        "rubrics": [
            {
                "scenario": r.scenario.value,
                "concept_link_id": r.concept_link_id,
                "scale": {str(k): v for k, v in sorted(r.scale.items())},
            }
            for r in ds.rubrics
        ],
    }
    if ds.ground_truth is not None:
        d["ground_truth"] = [{**t.to_dict(), "score": s} for t, s in ds.ground_truth.items()]
    if ds.ocr:
        d["ocr"] = [
            {
                "image_sha256": r.image_sha256,
                "text": r.text,
                "backend_id": r.backend_id,
                "prompt_hash": r.prompt_hash,
            }
            for r in ds.ocr
        ]
    return d


def dumps_manifest(ds: Dataset) -> str:
    return json.dumps(dataset_to_dict(ds), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def save_dataset(ds: Dataset, root: str | Path) -> Path:
    """Write ``ds`` under ``root``, copying image files when the root changes."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if root.resolve() != Path(ds.root).resolve():
        refs = [r for q in ds.questions for r in q.image_refs]
        refs += [r for a in ds.answers for r in a.image_refs]
        for ref in refs:
            dst = ref.resolve(root)
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(ref.resolve(ds.root), dst)
    (root / MANIFEST).write_text(dumps_manifest(ds), encoding="utf-8")
    return root / MANIFEST


def _parse_images(raw: Any, where: str, errors: list[Violation]) -> tuple[ImageRef, ...]:
    refs = []
    for i, item in enumerate(raw or []):
        try:
            refs.append(ImageRef(str(item["path"]), str(item["sha256"]).lower()))
        except (KeyError, TypeError):
            errors.append(Violation(where, f"malformed image entry #{i}"))
    return tuple(refs)


def _check_images(
    root: Path, refs: Iterable[ImageRef], where: str, errors: list[Violation]
) -> None:
    for ref in refs:
        path = ref.resolve(root)
        if not path.is_file():
            errors.append(Violation(where, f"missing image file {ref.path}"))
            continue
        try:
            digest = sha256_file(path)
        except OSError as exc:
            errors.append(Violation(where, f"unreadable image file {ref.path}: {exc}"))
            continue
        if digest != ref.sha256:
            errors.append(Violation(where, f"hash mismatch for {ref.path}"))


def check_rubrics(ds: Dataset) -> list[Violation]:
    out: list[Violation] = []
    seen: set[tuple[str, str]] = set()
    edge_ids = ds.graph.edge_ids
    for r in ds.rubrics:
        key = _rubric_key(r)
        where = f"rubric {r.scenario.value}" + (f"/{r.concept_link_id}" if r.concept_link_id else "")
        if key in seen:
            out.append(Violation(where, "duplicate rubric"))
        seen.add(key)
        if r.scenario is Scenario.DETAILED:
            if not r.concept_link_id:
                out.append(Violation(where, "Detailed rubric needs a concept_link_id"))
            elif r.concept_link_id not in edge_ids:
                out.append(Violation(where, f"unknown concept link {r.concept_link_id}"))
            if sorted(r.scale) != [1, 2, 3, 4, 5] or not all(str(v).strip() for v in r.scale.values()):
                out.append(Violation(where, "Detailed rubric needs five nonempty descriptions for 1..5"))
        else:
            if r.concept_link_id:
                out.append(Violation(where, "only Detailed rubrics name a concept link"))
            if r.scenario is Scenario.BASE and r.scale:
                out.append(Violation(where, "Base rubric must have an empty scale"))
            if r.scenario in (Scenario.GENERIC, Scenario.COT) and dict(r.scale) != GENERIC_SCALE:
                out.append(Violation(where, "scale differs from the generic five-point scale"))
    return sorted(out)


def check_dataset(ds: Dataset) -> list[Violation]:
    """Every invariant violation of a parsed dataset (files are checked too)."""
    root = Path(ds.root)
    out: list[Violation] = []
    out += validate_graph(ds.graph)

    qids = [q.id for q in ds.questions]
    out += validate_map(ds.qmap, ds.graph, qids)
    seen: set[str] = set()
    for q in ds.questions:
        if not q.id:
            out.append(Violation("<question>", "empty question id"))
        if q.id in seen:
            out.append(Violation(q.id, "duplicate question id"))
        seen.add(q.id)
        _check_images(root, q.image_refs, f"question {q.id}", out)
    for q in sorted(set(ds.qmap.entries) - seen):
        out.append(Violation(q, "concept-link map names an unknown question"))

    pairs: set[tuple[str, str]] = set()
    for a in ds.answers:
        where = f"answer {a.student_id}/{a.question_id}"
        if a.question_id not in seen:
            out.append(Violation(where, f"dangling question id {a.question_id}"))
        if not a.student_id:
            out.append(Violation(where, "empty student id"))
        if (a.question_id, a.student_id) in pairs:
            out.append(Violation(where, "duplicate answer"))
        pairs.add((a.question_id, a.student_id))
        if not (a.text or "").strip() and not a.image_refs:
            out.append(Violation(where, "answer has neither text nor images"))
        _check_images(root, a.image_refs, where, out)

    out += check_rubrics(ds)

    if ds.ground_truth is not None:
        valid = set(enumerate_triplets(ds))
        for t, score in ds.ground_truth.items():
            where = f"ground truth {t.student_id}/{t.question_id}/{t.concept_link_id}"
            if t not in valid:
                out.append(Violation(where, "dangling triplet (no answer or link not mapped)"))
            if not isinstance(score, int) or isinstance(score, bool) or not MIN_SCORE <= score <= MAX_SCORE:
                out.append(Violation(where, f"score out of range: {score!r}"))
        for t in sorted(valid - set(ds.ground_truth)):
            out.append(
                Violation(
                    f"ground truth {t.student_id}/{t.question_id}/{t.concept_link_id}",
                    "missing ground-truth score",
                )
            )
    return sorted(set(out))


def dataset_from_dict(data: Mapping[str, Any], root: str | Path) -> tuple[Dataset, list[Violation]]:
    """Parse a manifest dict.  Structural problems come back as violations."""
    errors: list[Violation] = []
    graph = ConceptGraph.from_dict(data.get("graph", {}))
    qmap = QuestionConceptMap.from_dict(data.get("question_concept_map", {}))

    questions = []
    for i, q in enumerate(data.get("questions", [])):
        if "id" not in q:
            errors.append(Violation(f"question #{i}", "missing id"))
            continue
        questions.append(
            Question(str(q["id"]), q.get("text") or "", _parse_images(q.get("images"), f"question {q['id']}", errors))
        )

    answers = []
    for i, a in enumerate(data.get("answers", [])):
        if "question_id" not in a or "student_id" not in a:
            errors.append(Violation(f"answer #{i}", "missing question_id or student_id"))
            continue
        where = f"answer {a['student_id']}/{a['question_id']}"
        answers.append(
            StudentAnswer(str(a["question_id"]), str(a["student_id"]), a.get("text"), _parse_images(a.get("images"), where, errors))
        )

    rubrics = []
    for i, r in enumerate(data.get("rubrics", [])):
        try:
            scenario = Scenario.parse(r["scenario"])
            scale = {int(k): str(v) for k, v in (r.get("scale") or {}).items()}
        except (KeyError, ValueError, TypeError) as exc:
            errors.append(Violation(f"rubric #{i}", f"malformed rubric: {exc}"))
            continue
        rubrics.append(Rubric(scenario, scale, r.get("concept_link_id")))

    ground_truth: dict[Triplet, int] | None = None
    if data.get("ground_truth") is not None:
        ground_truth = {}
        for i, g in enumerate(data["ground_truth"]):
            try:
                t = Triplet.from_dict(g)
                score = g["score"]
            except (KeyError, TypeError):
                errors.append(Violation(f"ground truth #{i}", "malformed record"))
                continue
            if t in ground_truth:
                errors.append(
                    Violation(f"ground truth {t.student_id}/{t.question_id}/{t.concept_link_id}", "duplicate record")
                )
            ground_truth[t] = score

    ocr = tuple(
        OcrRecord(str(o["image_sha256"]), str(o.get("text", "")), str(o["backend_id"]), str(o["prompt_hash"]))
        for o in data.get("ocr", [])
    )
    ds = Dataset(
        root=Path(root),
        graph=graph,
        qmap=qmap,
        questions=tuple(questions),
        answers=tuple(answers),
        rubrics=tuple(rubrics),
        ground_truth=ground_truth,
        topic=data.get("topic") or DEFAULT_TOPIC,
        ocr=ocr,
    )
    return ds, errors


def load_dataset(root: str | Path) -> Dataset:
    """Load and fully validate the dataset under ``root``.

    Raises ``InputError`` when the root or manifest cannot be read and
    ``DatasetError`` listing every violation otherwise.
    """
    root = Path(root)
    manifest = root / MANIFEST
    if not root.is_dir():
        raise InputError(f"dataset root not found: {root}")
    try:
        data = json.loads(manifest.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"missing manifest file: {manifest}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"unreadable manifest {manifest}: {exc}") from exc

    ds, errors = dataset_from_dict(data, root)
    errors += check_dataset(ds)
    if errors:
        raise DatasetError([str(v) for v in sorted(set(errors))])
    return ds


def with_ocr(ds: Dataset, records: Iterable[OcrRecord], overwrite: bool = False) -> Dataset:
    """Attach transcriptions and fill empty question/answer text from them.

    Authored text is kept unless ``overwrite`` is set.  Text from several
    images of one item is joined in attachment order.
    """
    by_hash = {r.image_sha256: r for r in ds.ocr}
    by_hash.update({r.image_sha256: r for r in records})

    def transcribe(refs: tuple[ImageRef, ...]) -> str | None:
        parts = [by_hash[r.sha256].text for r in refs if r.sha256 in by_hash]
        return "\n".join(parts) if parts else None

    questions = []
    for q in ds.questions:
        text = transcribe(q.image_refs)
        if text is not None and (overwrite or not q.text.strip()):
            q = replace(q, text=text)
        questions.append(q)
    answers = []
    for a in ds.answers:
        text = transcribe(a.image_refs)
        if text is not None and (overwrite or not (a.text or "").strip()):
            a = replace(a, text=text)
        answers.append(a)
    return replace(ds, questions=tuple(questions), answers=tuple(answers), ocr=tuple(by_hash.values()))

"""Scoring prompts for the four scenarios.

Base, Generic and CoT reproduce the published evaluator prompts byte for
byte.  Three things are added around that fixed text:

* a ``Concept link: <name>`` line directly above the task line,
* optional ``Question text:`` / ``Answer text:`` blocks after the
  image-role sentences, and
* for Detailed, the concept-link rubric in place of the generic scale lines.

``golden_check`` compares each template, rendered with placeholder tokens,
against the committed files in ``prompts/``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .dataset import DEFAULT_TOPIC, GENERIC_SCALE, Dataset, ImageRef, Scenario, Triplet
from .errors import ConfigError

_HEADER = (
    "You are an expert evaluator of student responses. \n\n"
    "The provided questions and student answers belong to the topic of {topic}. \n\n"
    "The first image provided belongs to the question.\n\n"
    "A second image if present belongs to the student answer.\n\n"
)
_DEFINITION = (
    "A strength score is a number between 1 and 5 (both inclusive) which is used to "
    "represent how well a concept link has been expressed in the student answer.\n\n"
)
_TASK = (
    "Task : Your task is to generate the strength score of the concept link by "
    "analyzing the question and student answer pair.\n\n"
)
_COT_STEPS = (
    "Task Instructions:\n\n"
    "1. Review the question carefully.\n\n"
    "2. Evaluate the student’s answer.\n\n"
    "3. Consider the scoring guide, which maps scores to descriptions.\n\n"
    "4. Choose the score (1–5) that best reflects how effectively the student’s "
    "answer demonstrates the concept link.\n\n"
    "5. Return only the selected score in the specified output format.\n\n"
    "Scoring Guide (1–5):\n\n"
    'Each line can be read as "score : general description – concept-link specific description"\n\n'
)
_FORMAT = "Output Format (strict):\n\n<Score>an integer between 1 and 5</Score>\n\nExamples:\n\n"
# the Generic prompt has an extra blank line between the two examples
_EXAMPLES = "<Score>1</Score>\n\n<Score>5</Score>"
_EXAMPLES_GENERIC = "<Score>1</Score>\n\n\n<Score>5</Score>"

OUTPUT_FORMAT_MARKER = "Output Format (strict):"

PLACEHOLDER_LINK = "<<CONCEPT_LINK>>"
PLACEHOLDER_QUESTION = "<<QUESTION_TEXT>>"
PLACEHOLDER_ANSWER = "<<ANSWER_TEXT>>"
PLACEHOLDER_SCALE = {k: f"<<RUBRIC_{k}>>" for k in range(1, 6)}

GOLDEN_FILES = {
    Scenario.BASE: "base.txt",
    Scenario.GENERIC: "generic.txt",
    Scenario.DETAILED: "detailed.txt",
    Scenario.COT: "cot.txt",
}


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    attachments: tuple[ImageRef, ...]
    scenario: Scenario | str
    triplet: Triplet | None = None


def _scale_lines(scale: Mapping[int, str]) -> str:
    return "\n\n".join(f"{k} : {scale[k]}" for k in range(1, 6))


def render_template(
    scenario: Scenario,
    concept_link: str,
    question_text: str | None = None,
    answer_text: str | None = None,
    scale: Mapping[int, str] | None = None,
    topic: str = DEFAULT_TOPIC,
) -> str:
    """Assemble the prompt text for one scenario.

    ``scale`` is only used (and required) for Detailed.
    """
    parts = [_HEADER.replace("{topic}", topic)]
    if question_text:
        parts.append(f"Question text:\n{question_text}\n\n")
    if answer_text:
        parts.append(f"Answer text:\n{answer_text}\n\n")
    parts.append(_DEFINITION)
    link_line = f"Concept link: {concept_link}\n"

    if scenario is Scenario.BASE:
        parts += ["\n", link_line, _TASK, "\n", _FORMAT, _EXAMPLES]
    elif scenario in (Scenario.GENERIC, Scenario.DETAILED):
        if scenario is Scenario.DETAILED:
            if scale is None:
                raise ConfigError("Detailed prompt needs a concept-link rubric")
        else:
            scale = GENERIC_SCALE
        parts += [
            link_line,
            _TASK,
            "Strength Score Scale (1–5):\n\n",
            _scale_lines(scale),
            "\n\n\n",
            _FORMAT,
            _EXAMPLES_GENERIC,
        ]
    elif scenario is Scenario.COT:
        parts += [link_line, _COT_STEPS, _scale_lines(GENERIC_SCALE), "\n\n", _FORMAT, _EXAMPLES]
    else:  # pragma: no cover - enum is closed
        raise ConfigError(f"unknown scenario {scenario!r}")
    return "".join(parts)


def build_prompt(scenario: Scenario, triplet: Triplet, dataset: Dataset) -> RenderedPrompt:
    scenario = Scenario(scenario)
    question = dataset.question(triplet.question_id)
    answer = dataset.answer(triplet.question_id, triplet.student_id)
    scale = None
    if scenario is Scenario.DETAILED:
        rubric = dataset.rubric(Scenario.DETAILED, triplet.concept_link_id)
        if rubric is None:
            raise ConfigError(f"no Detailed rubric for concept link {triplet.concept_link_id}")
        scale = rubric.scale
    text = render_template(
        scenario,
        dataset.graph.edge_name(triplet.concept_link_id),
        question.text or None,
        answer.text or None,
        scale=scale,
        topic=dataset.topic,
    )
    return RenderedPrompt(text, question.image_refs + answer.image_refs, scenario, triplet)


def golden_text(scenario: Scenario) -> str:
    """The template with every variable slot shown as a placeholder token."""
    scenario = Scenario(scenario)
    return render_template(
        scenario,
        PLACEHOLDER_LINK,
        PLACEHOLDER_QUESTION,
        PLACEHOLDER_ANSWER,
        scale=PLACEHOLDER_SCALE if scenario is Scenario.DETAILED else None,
    )


def golden_path(scenario: Scenario, golden_dir: str | Path | None = None) -> Path:
    name = GOLDEN_FILES[Scenario(scenario)]
    if golden_dir is not None:
        return Path(golden_dir) / name
    return Path(str(resources.files("conceptgrader") / "prompts" / name))


def golden_check(scenario: Scenario, golden_dir: str | Path | None = None) -> bool:
    path = golden_path(scenario, golden_dir)
    if not path.is_file():
        raise FileNotFoundError(f"golden prompt file missing: {path}")
    return path.read_bytes() == golden_text(scenario).encode("utf-8")


def write_goldens(golden_dir: str | Path) -> None:
    """Regenerate golden files; only for deliberate template changes."""
    for scenario in Scenario:
        golden_path(scenario, golden_dir).write_bytes(golden_text(scenario).encode("utf-8"))

"""Pull an integer strength score out of free-form model output.

The cascade, first stage with a candidate wins and the *last* candidate
within a stage is taken:

1. ``<Score>k</Score>`` tags (the requested format),
2. ``\\boxed{k}`` (benchmark habit of some models),
3. the last standalone integer token in 1..5.

A stage-1 or stage-2 value outside 1..5 is reported as ``out_of_range``
rather than clamped.  If the only score-like markup holds something that is
not a plain integer (``<Score>3.5</Score>``, ``\\boxed{3 or 4}``) the result is
``ambiguous`` instead of guessing from digits inside it.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

MAX_EXCERPT = 500

# Last occurrence wins, so every pattern is written for the *reversed* text and
# the first hit there is the last one in the original.  This keeps 1 MB inputs
# to a single pass that usually stops near the end.
_TAG_REV = re.compile(r">\s*erocs\s*/\s*<([^<]{0,200})>\s*erocs\s*<", re.IGNORECASE)
_BOXED_REV = re.compile(r"\}([^{}]{0,200})\{\s*dexob\\")
_INT = re.compile(r"\s*([+-]?\d+)\s*")
# a lone digit 1..5 not glued to word characters, a decimal point or a minus
# sign; the digit comes first so the engine can skip straight to candidates
_BARE_REV = re.compile(r"([1-5])(?<!\w[1-5])(?<!\d\.[1-5])(?![\w.\-])")


class Rule(str, enum.Enum):
    TAGGED = "tagged"
    BOXED = "boxed"
    LAST_IN_RANGE = "last_in_range"


class FailureReason(str, enum.Enum):
    NO_SCORE_FOUND = "no_score_found"
    OUT_OF_RANGE = "out_of_range"
    AMBIGUOUS = "ambiguous"


@dataclass(frozen=True)
class ParsedScore:
    value: int
    rule: Rule
    raw_excerpt: str = field(default="", compare=False)

    ok = True


@dataclass(frozen=True)
class ParseFailure:
    reason: FailureReason
    raw_excerpt: str = field(default="", compare=False)

    ok = False


def _excerpt(s: str) -> str:
    return s[-MAX_EXCERPT:]


def _scan(pattern: re.Pattern[str], rev: str) -> tuple[re.Match[str] | None, str | None, str | None]:
    """Return (last well-formed match, its integer text, content of the last match)."""
    last_content = None
    for m in pattern.finditer(rev):
        content = m.group(1)[::-1]
        if last_content is None:
            last_content = content
        num = _INT.fullmatch(content)
        if num:
            return m, num.group(1), last_content
    return None, None, last_content


def parse_score(raw_text: str | None) -> ParsedScore | ParseFailure:
    text = raw_text or ""
    rev = text[::-1]
    n = len(text)
    contents = []
    for pattern, rule in ((_TAG_REV, Rule.TAGGED), (_BOXED_REV, Rule.BOXED)):
        m, num, last_content = _scan(pattern, rev)
        if m is not None:
            excerpt = _excerpt(m.group(0)[::-1])
            k = int(num)
            if 1 <= k <= 5:
                return ParsedScore(k, rule, excerpt)
            return ParseFailure(FailureReason.OUT_OF_RANGE, excerpt)
        contents.append(last_content)

    for content in contents:
        if content is not None and re.search(r"\d", content):
            return ParseFailure(FailureReason.AMBIGUOUS, _excerpt(content))

    m = _BARE_REV.search(rev)
    if m is not None:
        end = n - m.start()
        return ParsedScore(int(m.group(1)), Rule.LAST_IN_RANGE, text[max(0, end - 41) : end])
    return ParseFailure(FailureReason.NO_SCORE_FOUND, _excerpt(text))

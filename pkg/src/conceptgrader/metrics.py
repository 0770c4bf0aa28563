"""Agreement between model and human scores on the 1..5 scale.

Exact-match accuracy and RMSE compare paired scores; the earth mover's
distance compares the two score distributions.  For distributions on the
ordered support 1..5 with ground distance ``|i - j|`` the optimal transport
cost is the L1 distance between the CDFs, which is what ``emd`` computes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Scenario, Triplet
from .errors import MetricError
from .parsing import FailureReason, ParsedScore, ParseFailure

SCORES = (1, 2, 3, 4, 5)
IMPUTED_SCORE = 3


@dataclass(frozen=True)
class ScorePair:
    human: int
    model: int
    triplet: Triplet | None = None

    def __post_init__(self) -> None:
        for v in (self.human, self.model):
            if v not in SCORES:
                raise ValueError(f"score out of range: {v!r}")


def _arrays(pairs: Iterable[ScorePair | tuple[int, int]]) -> tuple[np.ndarray, np.ndarray]:
    hs, ms = [], []
    for p in pairs:
        h, m = (p.human, p.model) if isinstance(p, ScorePair) else p
        hs.append(h)
        ms.append(m)
    if not hs:
        raise MetricError("metric undefined for an empty pair list")
    return np.asarray(hs, dtype=np.int64), np.asarray(ms, dtype=np.int64)


def exact_match_accuracy(pairs: Iterable[ScorePair | tuple[int, int]]) -> float:
    """Percentage of pairs where model and human agree, at full precision."""
    h, m = _arrays(pairs)
    return 100.0 * int(np.count_nonzero(h == m)) / h.size


def rmse(pairs: Iterable[ScorePair | tuple[int, int]]) -> float:
    h, m = _arrays(pairs)
    sq = int(np.sum((m - h) ** 2))
    return math.sqrt(sq / h.size)


@dataclass(frozen=True)
class ScoreHistogram:
    counts: tuple[int, ...]  # counts for scores 1..5

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 5 or any(c < 0 for c in counts):
            raise ValueError(f"need five nonnegative counts, got {self.counts!r}")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(self.counts)

    @classmethod
    def from_scores(cls, scores: Iterable[int]) -> ScoreHistogram:
        counts = [0] * 5
        for s in scores:
            if s not in SCORES:
                raise ValueError(f"score out of range: {s!r}")
            counts[s - 1] += 1
        return cls(tuple(counts))

    def probabilities(self) -> np.ndarray:
        if self.total <= 0:
            raise MetricError("histogram has zero total")
        return np.asarray(self.counts, dtype=float) / self.total


def emd(h_model: ScoreHistogram, h_human: ScoreHistogram) -> float:
    p = h_model.probabilities()
    q = h_human.probabilities()
    return float(np.sum(np.abs(np.cumsum(p)[:4] - np.cumsum(q)[:4])))


# -- reports -------------------------------------------------------------------

Outcome = ParsedScore | ParseFailure


@dataclass(frozen=True)
class ReportRow:
    backend_id: str
    scenario: str
    accuracy_percent: float | None
    rmse: float | None
    emd: float | None
    n_pairs: int
    n_parse_failures: int
    imputed: bool = False
    failure_reasons: Mapping[str, int] = field(default_factory=dict, compare=False)

    @property
    def available(self) -> bool:
        return self.accuracy_percent is not None


@dataclass(frozen=True)
class EvaluationReport:
    rows: tuple[ReportRow, ...]

    def row(self, backend_id: str, scenario: str) -> ReportRow:
        for r in self.rows:
            if r.backend_id == backend_id and r.scenario == scenario:
                return r
        raise KeyError((backend_id, scenario))


def _row(backend_id: str, scenario: str, batch: Sequence[tuple[Outcome, int]], impute: bool) -> ReportRow:
    pairs = []
    reasons: dict[str, int] = {}
    failures = 0
    for outcome, truth in batch:
        if isinstance(outcome, ParsedScore):
            pairs.append((truth, outcome.value))
            continue
        failures += 1
        key = outcome.reason.value if isinstance(outcome.reason, FailureReason) else str(outcome.reason)
        reasons[key] = reasons.get(key, 0) + 1
        if impute:
            pairs.append((truth, IMPUTED_SCORE))
    n_pairs = len(batch) - failures
    if not pairs:
        return ReportRow(backend_id, scenario, None, None, None, 0, failures, impute, reasons)
    hist_h = ScoreHistogram.from_scores(h for h, _ in pairs)
    hist_m = ScoreHistogram.from_scores(m for _, m in pairs)
    return ReportRow(
        backend_id,
        scenario,
        exact_match_accuracy(pairs),
        rmse(pairs),
        emd(hist_m, hist_h),
        n_pairs,
        failures,
        impute and failures > 0,
        dict(sorted(reasons.items())),
    )


def build_report(
    batches: Mapping[tuple[str, str], Sequence[tuple[Outcome, int]]],
    impute: bool = False,
) -> EvaluationReport:
    """One row per (backend, scenario), best accuracy first.

    Parse failures are left out of the metrics and counted; with ``impute``
    they are scored as 3 instead and the row is flagged.  Rows with nothing
    to score stay in the report as n/a, listed last.
    """
    rows = [_row(str(b), _scenario_label(s), batch, impute) for (b, s), batch in batches.items()]
    rows.sort(
        key=lambda r: (
            not r.available,
            -(r.accuracy_percent or 0.0),
            r.backend_id,
            _SCENARIO_ORDER.get(r.scenario, 99),
            r.scenario,
        )
    )
    return EvaluationReport(tuple(rows))


_SCENARIO_ORDER = {s.value: i for i, s in enumerate(Scenario)}


def _scenario_label(s: Scenario | str) -> str:
    return s.value if isinstance(s, Scenario) else str(s)


def _fmt(v: float | None, digits: int) -> str:
    if v is None:
        return "n/a"
    # -0.0 and 1e-17 noise would otherwise leak into byte comparisons
    return f"{round(v, digits) + 0.0:.{digits}f}"


CSV_COLUMNS = (
    "backend",
    "scenario",
    "accuracy",
    "rmse",
    "emd",
    "n_pairs",
    "n_parse_failures",
    "imputed",
)


def _cells(r: ReportRow) -> list[str]:
    return [
        r.backend_id,
        r.scenario,
        _fmt(r.accuracy_percent, 2),
        _fmt(r.rmse, 4),
        _fmt(r.emd, 4),
        str(r.n_pairs),
        str(r.n_parse_failures),
        "yes" if r.imputed else "no",
    ]


def render_csv(report: EvaluationReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in report.rows:
        w.writerow(_cells(r))
    return buf.getvalue()


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    return [fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]


def render_text(report: EvaluationReport) -> str:
    """Long table (one line per backend/scenario) plus a per-backend pivot."""
    lines = ["Scores by backend and scenario (sorted by accuracy)", ""]
    lines += _table(
        ["Backend", "Scenario", "Accuracy", "RMSE", "EMD", "N", "ParseFail", "Imputed"],
        [_cells(r) for r in report.rows],
    )

    scenarios = sorted({r.scenario for r in report.rows}, key=lambda s: (_SCENARIO_ORDER.get(s, 99), s))
    backends: list[str] = []
    for r in report.rows:
        if r.backend_id not in backends:
            backends.append(r.backend_id)
    header = ["Model"]
    for s in scenarios:
        header += [f"{s} Acc", f"{s} RMSE", f"{s} EMD"]
    pivot = []
    for b in backends:
        line = [b]
        for s in scenarios:
            try:
                r = report.row(b, s)
                line += [_fmt(r.accuracy_percent, 2), _fmt(r.rmse, 2), _fmt(r.emd, 2)]
            except KeyError:
                line += ["-", "-", "-"]
        pivot.append(line)
    lines += ["", "Per-scenario view", ""]
    lines += _table(header, pivot)
    return "\n".join(lines) + "\n"

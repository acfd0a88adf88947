"""Competition scoring: per-category metrics, submission score and reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import CategoryId
from .errors import CategoryMismatch, LengthMismatch, MissingCategory

F1_WEIGHT = 0.75
OUTPERFORM_WEIGHT = 0.25


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative confusion count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class CategoryMetrics:
    precision: float
    recall: float
    f1: float
    weighted_f1: float
    accuracy: float | None = None


@dataclass(frozen=True)
class BaselineScores:
    precision: float
    recall: float
    f1: float
    weighted_f1: float


BaselineTable = Mapping[CategoryId, BaselineScores]


@dataclass
class EvalReport:
    per_category: dict[CategoryId, tuple[CategoryMetrics, ConfusionCounts | None]]
    averages: CategoryMetrics
    delta_f1: dict[CategoryId, float | None] = field(default_factory=dict)
    baseline_averages: BaselineScores | None = None
    submission_score: float | None = None
    outperformed_fraction: float | None = None

    @property
    def categories(self) -> list[CategoryId]:
        return list(self.per_category)


def confusion(predictions: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    """Confusion counts with class 1 as the positive class."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(labels)} labels")
    if not len(labels):
        raise LengthMismatch("cannot score an empty prediction list")
    tp = fp = tn = fn = 0
    for p, y in zip(predictions, labels):
        p, y = int(p), int(y)
        if p not in (0, 1) or y not in (0, 1):
            raise ValueError(f"predictions and labels must be 0/1, got {p}, {y}")
        if p:
            if y:
                tp += 1
            else:
                fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def category_metrics(c: ConfusionCounts) -> CategoryMetrics:
    """Precision, recall and F1 of the positive class, plus support-weighted F1.

    Zero denominators yield 0. ``weighted_f1`` averages the F1 of class 1
    and class 0 weighted by their supports ``tp + fn`` and ``tn + fp``.
    """
    p = _ratio(c.tp, c.tp + c.fp)
    r = _ratio(c.tp, c.tp + c.fn)
    f1 = _f1(p, r)
    f1_neg = _f1(_ratio(c.tn, c.tn + c.fn), _ratio(c.tn, c.tn + c.fp))
    pos, neg = c.tp + c.fn, c.tn + c.fp
    weighted = (pos * f1 + neg * f1_neg) / (pos + neg) if pos + neg else 0.0
    return CategoryMetrics(p, r, f1, weighted, _ratio(c.tp + c.tn, c.total))


@cache
def _load_scores(name: str) -> dict[CategoryId, BaselineScores]:
    raw = json.loads(resources.files("commentclf.data").joinpath(name).read_text("utf-8"))
    return {CategoryId.parse(k): BaselineScores(**v) for k, v in raw["categories"].items()}


def baseline_table() -> dict[CategoryId, BaselineScores]:
    """Scores of the competition's Random Forest baseline, one row per category."""
    return dict(_load_scores("baseline_scores.json"))


def published_scores() -> dict[CategoryId, BaselineScores]:
    """Published per-category scores of the full-scale fine-tuned classifiers (reference only)."""
    return dict(_load_scores("published_scores.json"))


def submission_score(f1_by_category: Mapping[CategoryId, float], baseline: BaselineTable) -> tuple[float, float]:
    """``0.75 * mean F1 + 0.25 * fraction of categories strictly beating the baseline F1``.

    Returns ``(score, outperformed_fraction)``. Every baseline category must
    be present.
    """
    missing = [str(c) for c in baseline if c not in f1_by_category]
    if missing:
        raise MissingCategory(f"no F1 for {len(missing)} categories: {', '.join(missing)}")
    extra = [str(c) for c in f1_by_category if c not in baseline]
    if extra:
        raise CategoryMismatch(f"categories without a baseline: {', '.join(extra)}")
    n = len(baseline)
    mean_f1 = sum(f1_by_category[c] for c in baseline) / n
    fraction = sum(1 for c, b in baseline.items() if f1_by_category[c] > b.f1) / n
    return mean_f1 * F1_WEIGHT + fraction * OUTPERFORM_WEIGHT, fraction


def _mean(values: list[float | None]) -> float | None:
    if not values or any(v is None for v in values):
        return None
    return sum(values) / len(values)


def build_report(
    results: Mapping[CategoryId, CategoryMetrics | ConfusionCounts | tuple[CategoryMetrics, ConfusionCounts | None]],
    baseline: BaselineTable | None = None,
) -> EvalReport:
    """Assemble per-category rows, averages, F1 deltas and (if complete) the score.

    Each result may be a ``CategoryMetrics``, a ``ConfusionCounts`` or a
    ``(metrics, counts)`` pair. Rows are ordered by language then name. The
    submission score is only computed when the results cover every baseline
    category.
    """
    if not results:
        raise ValueError("report needs at least one category")
    baseline = baseline_table() if baseline is None else baseline
    rows: dict[CategoryId, tuple[CategoryMetrics, ConfusionCounts | None]] = {}
    for cat in sorted(results):
        r = results[cat]
        if isinstance(r, ConfusionCounts):
            rows[cat] = (category_metrics(r), r)
        elif isinstance(r, CategoryMetrics):
            rows[cat] = (r, None)
        else:
            rows[cat] = (r[0], r[1])
    ms = [m for m, _ in rows.values()]
    averages = CategoryMetrics(
        precision=_mean([m.precision for m in ms]),
        recall=_mean([m.recall for m in ms]),
        f1=_mean([m.f1 for m in ms]),
        weighted_f1=_mean([m.weighted_f1 for m in ms]),
        accuracy=_mean([m.accuracy for m in ms]),
    )
    delta = {c: (m.f1 - baseline[c].f1 if c in baseline else None) for c, (m, _) in rows.items()}
    base_rows = [baseline[c] for c in rows if c in baseline]
    baseline_avg = None
    if len(base_rows) == len(rows):
        baseline_avg = BaselineScores(
            precision=_mean([b.precision for b in base_rows]),
            recall=_mean([b.recall for b in base_rows]),
            f1=_mean([b.f1 for b in base_rows]),
            weighted_f1=_mean([b.weighted_f1 for b in base_rows]),
        )
    report = EvalReport(rows, averages, delta, baseline_avg)
    if set(rows) == set(baseline):
        report.submission_score, report.outperformed_fraction = submission_score(
            {c: m.f1 for c, (m, _) in rows.items()}, baseline
        )
    return report


def ablation_delta(report_with: EvalReport, report_without: EvalReport) -> tuple[float, float, float]:
    """Average (precision, recall, F1) of ``report_with`` minus ``report_without``."""
    if set(report_with.per_category) != set(report_without.per_category):
        raise CategoryMismatch("ablation reports cover different categories")
    a, b = report_with.averages, report_without.averages
    return a.precision - b.precision, a.recall - b.recall, a.f1 - b.f1


# -- rendering --------------------------------------------------------------------

CSV_COLUMNS = [
    "language", "category", "tp", "fp", "tn", "fn",
    "precision", "recall", "f1", "weighted_f1", "accuracy",
    "baseline_f1", "delta_f1",
]  # fmt: skip


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_rows(report: EvalReport, baseline: BaselineTable | None = None) -> list[list[str]]:
    baseline = baseline_table() if baseline is None else baseline
    out = []
    for cat, (m, c) in report.per_category.items():
        b = baseline.get(cat)
        out.append([
            cat.language, cat.name,
            *(("", "", "", "") if c is None else (c.tp, c.fp, c.tn, c.fn)),
            m.precision, m.recall, m.f1, m.weighted_f1, m.accuracy,
            None if b is None else b.f1, report.delta_f1.get(cat),
        ])  # fmt: skip
    a = report.averages
    ba = report.baseline_averages
    deltas = [d for d in report.delta_f1.values() if d is not None]
    out.append([
        "Average", "", "", "", "", "",
        a.precision, a.recall, a.f1, a.weighted_f1, a.accuracy,
        None if ba is None else ba.f1,
        sum(deltas) / len(deltas) if len(deltas) == len(report.delta_f1) else None,
    ])  # fmt: skip
    return [[_cell(v) for v in row] for row in out]


def report_csv(report: EvalReport, baseline: BaselineTable | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(report_rows(report, baseline))
    return buf.getvalue()


def score_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n_categories", "mean_f1", "outperformed_fraction", "submission_score"])
    writer.writerow([
        len(report.per_category),
        _cell(report.averages.f1),
        _cell(report.outperformed_fraction),
        _cell(report.submission_score),
    ])  # fmt: skip
    return buf.getvalue()


def format_table(report: EvalReport, baseline: BaselineTable | None = None) -> str:
    """Aligned plain-text table, values at two decimals."""
    baseline = baseline_table() if baseline is None else baseline

    def fmt(v: float | None, signed: bool = False) -> str:
        if v is None:
            return "-"
        return f"{v:+.2f}" if signed else f"{v:.2f}"

    header = ["Language", "Category", "P", "R", "F1", "wF1", "Acc", "Base F1", "dF1"]
    body = []
    for cat, (m, _) in report.per_category.items():
        b = baseline.get(cat)
        body.append([
            cat.language, cat.name, fmt(m.precision), fmt(m.recall), fmt(m.f1),
            fmt(m.weighted_f1), fmt(m.accuracy), fmt(None if b is None else b.f1),
            fmt(report.delta_f1.get(cat), signed=True),
        ])  # fmt: skip
    a = report.averages
    ba = report.baseline_averages
    deltas = [d for d in report.delta_f1.values() if d is not None]
    body.append([
        "Average", "", fmt(a.precision), fmt(a.recall), fmt(a.f1), fmt(a.weighted_f1),
        fmt(a.accuracy), fmt(None if ba is None else ba.f1),
        fmt(sum(deltas) / len(deltas) if deltas and len(deltas) == len(body) else None, signed=True),
    ])  # fmt: skip
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i < 2 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths)))
             for r in [header, *body]]  # fmt: skip
    rule = "-" * len(lines[0])
    lines.insert(1, rule)
    lines.insert(len(lines) - 1, rule)
    if report.submission_score is not None:
        lines.append("")
        lines.append(
            f"submission score = {a.f1:.4f} * {F1_WEIGHT} + {report.outperformed_fraction:.4f} * "
            f"{OUTPERFORM_WEIGHT} = {report.submission_score:.4f}"
        )
    return "\n".join(lines) + "\n"


def plot_report(report: EvalReport, path: str | Path, baseline: BaselineTable | None = None) -> Path:
    """Bar chart of per-category F1 against the baseline F1, saved as a static image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    baseline = baseline_table() if baseline is None else baseline
    cats = report.categories
    ours = [report.per_category[c][0].f1 for c in cats]
    base = [baseline[c].f1 if c in baseline else 0.0 for c in cats]
    x = np.arange(len(cats))
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(cats) + 2), 4))
    ax.bar(x - 0.2, base, 0.4, label="baseline")
    ax.bar(x + 0.2, ours, 0.4, label="fine-tuned")
    ax.set_xticks(x, [str(c) for c in cats], rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("F1")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path

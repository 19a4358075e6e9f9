"""Confusion counts and rate metrics with attack as the positive class.

Rates are percentages; a division by zero leaves the field as None and
prints as NA rather than propagating NaN.  Two-decimal rounding happens
only at formatting time.
"""

import csv
import json
from dataclasses import dataclass

from .blocks import build_blocks
from .detector import DetectionVerdict, classify_blocks
from .errors import InsufficientData, LengthMismatch, UnlabeledData
from .frames import Label

__all__ = [
    "MetricsReport",
    "confusion",
    "evaluate_dataset",
    "format_table_row",
    "format_report",
    "report_to_dict",
    "write_reports_csv",
    "write_reports_jsonl",
]


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float | None
    fnr: float | None
    accuracy: float | None

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "MetricsReport":
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = None
        if precision is not None and recall is not None and precision + recall > 0:
            f1 = 2.0 * precision * recall / (precision + recall)
        return cls(
            tp=tp,
            fp=fp,
            tn=tn,
            fn=fn,
            precision=precision,
            recall=recall,
            f1=f1,
            fpr=_ratio(fp, fp + tn),
            fnr=_ratio(fn, fn + tp),
            accuracy=_ratio(tp + tn, tp + fp + tn + fn),
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _as_label(v) -> Label:
    return v.verdict if isinstance(v, DetectionVerdict) else v


def confusion(verdicts, labels) -> MetricsReport:
    """2x2 counts from aligned verdict/label sequences."""
    verdicts = list(verdicts)
    labels = list(labels)
    if len(verdicts) != len(labels):
        raise LengthMismatch(f"{len(verdicts)} verdicts vs {len(labels)} labels")
    tp = fp = tn = fn = 0
    for i, (v, lab) in enumerate(zip(verdicts, labels)):
        pred = _as_label(v)
        if lab is Label.ATTACK:
            if pred is Label.ATTACK:
                tp += 1
            else:
                fn += 1
        elif lab is Label.BENIGN:
            if pred is Label.ATTACK:
                fp += 1
            else:
                tn += 1
        else:
            raise UnlabeledData(f"label at position {i} is {lab}")
    return MetricsReport.from_counts(tp, fp, tn, fn)


def evaluate_dataset(model, dataset, threshold: int) -> tuple[MetricsReport, list]:
    """Build blocks, classify, aggregate; returns (report, verdict stream)."""
    blocks = build_blocks(dataset.frames)
    if not blocks:
        raise InsufficientData(
            f"dataset has {len(dataset.frames)} frames, fewer than one block"
        )
    verdicts = classify_blocks(model, blocks, threshold)
    report = confusion(verdicts, [b.label for b in blocks])
    return report, verdicts


def _pct(v: float | None) -> str:
    return "NA" if v is None else f"{v:.2f}"


def format_report(report: MetricsReport, title: str = "") -> str:
    lines = []
    if title:
        lines.append(title)
    lines.append(f"  blocks {report.total}  (tn {report.tn}  fp {report.fp}  "
                 f"fn {report.fn}  tp {report.tp})")
    lines.append(f"  precision {_pct(report.precision)}  recall {_pct(report.recall)}  "
                 f"f1 {_pct(report.f1)}")
    lines.append(f"  fpr {_pct(report.fpr)}  fnr {_pct(report.fnr)}  "
                 f"accuracy {_pct(report.accuracy)}")
    return "\n".join(lines)


def format_table_row(name: str, report: MetricsReport) -> str:
    """One aligned row per attack, for side-by-side comparison tables."""
    cells = [f"{name:<8s}"] + [
        f"{_pct(v):>7s}"
        for v in (report.precision, report.recall, report.f1, report.fpr, report.fnr)
    ]
    return " | ".join(cells)


TABLE_ROW_HEADER = " | ".join(
    [f"{'attack':<8s}"] + [f"{h:>7s}" for h in ("prec", "recall", "f1", "fpr", "fnr")]
)


def report_to_dict(report: MetricsReport, name: str = "") -> dict:
    out = {"name": name} if name else {}
    out.update(
        tp=report.tp, fp=report.fp, tn=report.tn, fn=report.fn,
        precision=report.precision, recall=report.recall, f1=report.f1,
        fpr=report.fpr, fnr=report.fnr, accuracy=report.accuracy,
    )
    return out


def write_reports_csv(named_reports: list[tuple[str, MetricsReport]], path) -> None:
    fields = ["name", "tp", "fp", "tn", "fn", "precision", "recall", "f1",
              "fpr", "fnr", "accuracy"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for name, report in named_reports:
            writer.writerow(report_to_dict(report, name))


def write_reports_jsonl(named_reports: list[tuple[str, MetricsReport]], path) -> None:
    with open(path, "w") as fh:
        for name, report in named_reports:
            fh.write(json.dumps(report_to_dict(report, name), sort_keys=True) + "\n")

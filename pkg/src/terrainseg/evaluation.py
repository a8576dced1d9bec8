"""Error rates and per-image reports in the layout of the published result tables."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dataset import IGNORE
from .segmentation import UNKNOWN


class EvaluationError(ValueError):
    pass


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.size == 0:
        raise EvaluationError("empty input")
    if pred.shape != truth.shape:
        raise EvaluationError("predictions and truth differ in length")
    return 100.0 * np.count_nonzero(pred == truth) / pred.size


def feature_error_rate(pred, truth) -> float:
    """Percentage of misclassified features, as the complement of :func:`accuracy`."""
    return 100.0 - accuracy(pred, truth)


def pixel_error_rate(seg, mask):
    """``(error %, coverage)`` over pixels that are labelled in the mask and known in ``seg``."""
    seg = np.asarray(seg)
    mask = np.asarray(mask)
    if seg.shape != mask.shape:
        raise EvaluationError("segmentation and mask differ in size")
    labelled = mask != IGNORE
    valid = labelled & (seg != UNKNOWN)
    if not valid.any():
        raise EvaluationError("no overlapping valid pixels")
    err = 100.0 * np.count_nonzero(seg[valid] != mask[valid]) / np.count_nonzero(valid)
    return err, np.count_nonzero(valid) / np.count_nonzero(labelled)


@dataclass
class EvalReport:
    label: str
    rates: list
    mean: float
    std: float

    @classmethod
    def from_rates(cls, label, rates) -> "EvalReport":
        r = [float(v) for v in rates]
        if not r:
            raise EvaluationError("no per-image rates")
        std = float(np.std(r, ddof=1)) if len(r) > 1 else 0.0
        return cls(label, r, float(np.mean(r)), std)

    def summary(self) -> str:
        return f"{self.mean:.2f}±{self.std:.2f}"


def format_report_csv(reports) -> str:
    n = max(len(r.rates) for r in reports)
    out = io.StringIO()
    out.write("label," + ",".join(f"img{i + 1:02d}" for i in range(n)) + ",mean,std\n")
    for r in reports:
        cells = [repr(v) for v in r.rates] + [""] * (n - len(r.rates))
        out.write(",".join([r.label] + cells + [repr(r.mean), repr(r.std)]) + "\n")
    return out.getvalue()


def parse_report_csv(text: str):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    reports = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rates = [float(v) for v in parts[1:-2] if v != ""]
        reports.append(EvalReport(parts[0], rates, float(parts[-2]), float(parts[-1])))
    return reports


def format_report_table(reports) -> str:
    """Aligned plain-text table with two-decimal rates and a mean±std column."""
    n = max(len(r.rates) for r in reports)
    width = max(len("label"), *(len(r.label) for r in reports))
    head = "label".ljust(width) + "".join(f"{'img%02d' % (i + 1):>8}" for i in range(n)) + "   mean±std"
    rows = [head]
    for r in reports:
        cells = "".join(f"{v:8.2f}" for v in r.rates) + " " * 8 * (n - len(r.rates))
        rows.append(r.label.ljust(width) + cells + "   " + r.summary())
    return "\n".join(rows) + "\n"

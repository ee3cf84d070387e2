"""Per-class evaluation metrics and the method comparison table.

Accuracy here is per-class recall: correct predictions of a class divided by
its sample count in the split. The rare class is reported on its own; the
"other" aggregate is the unweighted (macro) mean over the remaining classes,
excluding classes absent from the split. Evaluation always runs on the real
samples of a split.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import SPLITS, Dataset
from .network import Network


@dataclass
class RunMetrics:
    """Evaluation result on one split."""

    per_class_acc: np.ndarray
    rare_class_id: int
    rare_acc: float
    other_macro: float
    overall: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        def none_if_nan(x: float):
            return None if math.isnan(x) else float(x)

        return {
            "per_class_acc": [none_if_nan(float(a)) for a in self.per_class_acc],
            "rare_class_id": int(self.rare_class_id),
            "rare_acc": none_if_nan(self.rare_acc),
            "other_macro": none_if_nan(self.other_macro),
            "overall": none_if_nan(self.overall),
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RunMetrics":
        def nan_if_none(x):
            return math.nan if x is None else float(x)

        return cls(
            per_class_acc=np.array([nan_if_none(a) for a in payload["per_class_acc"]]),
            rare_class_id=int(payload["rare_class_id"]),
            rare_acc=nan_if_none(payload["rare_acc"]),
            other_macro=nan_if_none(payload["other_macro"]),
            overall=nan_if_none(payload["overall"]),
            confusion=np.asarray(payload["confusion"], dtype=np.int64),
        )


def evaluate(
    net: Network, dataset: Dataset, split: str, rare_class_id: int | None = None
) -> RunMetrics:
    """Argmax-of-logits evaluation of the real samples in a split.

    Classes absent from the split have undefined (NaN) accuracy and are
    excluded from the macro average.
    """
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    rare = dataset.rare_class_id if rare_class_id is None else rare_class_id
    idx = dataset.indices(split=split, domain="real")
    if idx.size == 0:
        raise ValueError(f"split {split!r} has no real samples")
    features, _ = net.forward_features(dataset.features[idx])
    logits, _ = net.forward_classifier(features)
    preds = np.argmax(logits, axis=1)
    truth = dataset.class_ids[idx]
    k = dataset.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    row_totals = confusion.sum(axis=1)
    with np.errstate(invalid="ignore"):
        per_class = np.where(row_totals > 0, np.diag(confusion) / row_totals, np.nan)
    others = np.delete(per_class, rare)
    other_macro = float(np.nanmean(others)) if np.isfinite(others).any() else math.nan
    return RunMetrics(
        per_class_acc=per_class,
        rare_class_id=rare,
        rare_acc=float(per_class[rare]),
        other_macro=other_macro,
        overall=float(np.trace(confusion) / confusion.sum()),
        confusion=confusion,
    )


TABLE_COLUMNS = ("trans_rare_acc", "cis_rare_acc", "trans_other_avg", "cis_other_avg")


def table_row(metrics_by_split: dict[str, RunMetrics]) -> dict[str, float]:
    """The four comparison-table numbers from test-split metrics."""
    return {
        "trans_rare_acc": metrics_by_split["trans_test"].rare_acc,
        "cis_rare_acc": metrics_by_split["cis_test"].rare_acc,
        "trans_other_avg": metrics_by_split["trans_test"].other_macro,
        "cis_other_avg": metrics_by_split["cis_test"].other_macro,
    }


def comparison_table(entries: list[tuple[str, dict[str, float]]]) -> tuple[str, str]:
    """Render the method comparison as aligned text and as CSV.

    ``entries`` maps a method name to its four accuracies (see ``table_row``).
    The text table shows percentages with one decimal; the CSV keeps full
    precision fractions and re-parses to the exact in-memory values.
    """
    name_width = max([len("method")] + [len(name) for name, _ in entries])
    headers = ("trans rare", "cis rare", "trans other", "cis other")
    lines = ["method".ljust(name_width) + "".join(h.rjust(13) for h in headers)]
    csv_lines = ["method," + ",".join(TABLE_COLUMNS)]
    for name, row in entries:
        cells = []
        csv_cells = [name]
        for col in TABLE_COLUMNS:
            value = row[col]
            cells.append(("-" if math.isnan(value) else f"{100.0 * value:.1f}").rjust(13))
            csv_cells.append("" if math.isnan(value) else repr(float(value)))
        lines.append(name.ljust(name_width) + "".join(cells))
        csv_lines.append(",".join(csv_cells))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"

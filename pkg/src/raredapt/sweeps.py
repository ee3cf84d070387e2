"""Synthetic-count sweeps: the learning-curve protocol over (count, seed) cells.

Each cell is an independent train + select + evaluate run; cells are
deterministic given their (count, seed) pair, so the grid can run in any order
or in parallel and merge to the same result. Failures are recorded per cell
and do not stop the sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import Dataset
from .metrics import RunMetrics, table_row
from .training import TrainConfig, train

SWEEP_CSV_COLUMNS = (
    "count",
    "seed",
    "trans_rare_acc",
    "trans_other_avg",
    "cis_rare_acc",
    "cis_other_avg",
)


@dataclass
class SweepCell:
    synthetic_count: int
    seed: int
    metrics: dict[str, RunMetrics] | None
    selected_epoch: int | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SweepResult:
    method: str
    cells: list[SweepCell]

    def cell(self, count: int, seed: int) -> SweepCell:
        for c in self.cells:
            if c.synthetic_count == count and c.seed == seed:
                return c
        raise KeyError(f"no sweep cell for count={count} seed={seed}")

    def mean_metric(self, count: int, key: str) -> float:
        """Seed-mean of one table metric at a synthetic count (NaN if all failed)."""
        values = [
            table_row(c.metrics)[key]
            for c in self.cells
            if c.synthetic_count == count and not c.failed
        ]
        return float(np.mean(values)) if values else math.nan


def run_cell(dataset: Dataset, base_config: TrainConfig, method: str, count: int, seed: int) -> SweepCell:
    config = replace(base_config, method=method, synthetic_count=count, seed=seed)
    try:
        checkpoint, history = train(dataset, config)
    except Exception as exc:
        return SweepCell(
            synthetic_count=count, seed=seed, metrics=None, selected_epoch=None, error=str(exc)
        )
    return SweepCell(
        synthetic_count=count,
        seed=seed,
        metrics=history[checkpoint.epoch].split_metrics,
        selected_epoch=checkpoint.epoch,
    )


def sweep(
    dataset: Dataset,
    base_config: TrainConfig,
    method: str,
    counts: Sequence[int],
    seeds: Sequence[int],
) -> SweepResult:
    """One independent run per (count, seed); counts must strictly increase."""
    counts = [int(c) for c in counts]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError(f"synthetic counts must be strictly increasing, got {counts}")
    cells = [
        run_cell(dataset, base_config, method, count, seed)
        for count in counts
        for seed in seeds
    ]
    return SweepResult(method=method, cells=cells)


def sweep_csv(result: SweepResult) -> str:
    """Aggregated learning-curve CSV; failed cells are excluded."""
    lines = [",".join(SWEEP_CSV_COLUMNS)]
    for cell in result.cells:
        if cell.failed:
            continue
        row = table_row(cell.metrics)
        lines.append(
            ",".join(
                [str(cell.synthetic_count), str(cell.seed)]
                + [
                    repr(float(row[k]))
                    for k in ("trans_rare_acc", "trans_other_avg", "cis_rare_acc", "cis_other_avg")
                ]
            )
        )
    return "\n".join(lines) + "\n"

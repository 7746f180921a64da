"""Worst-group accuracy evaluation and mean/std aggregation across seeds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset, GroupTable
from .errors import AggregationError, EvaluationError, ValidationError
from .linear import LinearModel, predict


@dataclass(frozen=True)
class ExperimentResult:
    """Per-seed evaluation: worst-group, per-group, and overall accuracy."""

    method: str
    noise_level: float
    seed: int
    wga: float
    group_accuracies: tuple
    overall_accuracy: float

    def __post_init__(self):
        accs = tuple(float(a) for a in self.group_accuracies)
        object.__setattr__(self, "group_accuracies", accs)
        if abs(self.wga - min(accs)) > 1e-12:
            raise ValidationError("wga must equal the minimum group accuracy")
        if self.wga > self.overall_accuracy + 1e-12:
            raise ValidationError("wga cannot exceed the overall accuracy")


@dataclass(frozen=True)
class SummaryRow:
    """One (method, noise) cell: mean and sample std over seeds."""

    method: str
    noise_level: float
    mean: float
    std: float
    count: int


def worst_group_accuracy(
    model: LinearModel,
    test: EmbeddingDataset,
    groups: GroupTable,
    method: str = "",
    noise_level: float = 0.0,
    seed: int = 0,
) -> ExperimentResult:
    """Evaluate accuracy within every (class, domain) group against clean labels.

    Groups always come from clean annotations; an empty group in the grid is an
    error (named in the message) since its accuracy would be undefined.
    """
    labels = test.clean_labels if test.clean_labels is not None else test.labels
    if groups.group_ids.shape != (test.n,):
        raise EvaluationError("group table does not cover the test rows")
    empty = np.flatnonzero(groups.sizes == 0)
    if empty.size:
        raise EvaluationError(f"empty group {groups.group_name(int(empty[0]))} in evaluation split")

    correct = predict(model, test.features) == labels
    accs = []
    for gid in range(groups.num_groups):
        members = groups.group_ids == gid
        accs.append(float(correct[members].mean()))
    return ExperimentResult(
        method=method,
        noise_level=noise_level,
        seed=seed,
        wga=min(accs),
        group_accuracies=tuple(accs),
        overall_accuracy=float(correct.mean()),
    )


def aggregate(results) -> list[SummaryRow]:
    """Collapse per-seed results into mean and sample std per (method, noise).

    Uses the n-1 denominator; a single result reports std 0.  Output rows are
    sorted by method then noise, so aggregation is order-independent.
    """
    results = list(results)
    if not results:
        raise AggregationError("no results to aggregate")
    cells: dict[tuple, list] = {}
    for r in results:
        cells.setdefault((r.method, r.noise_level), []).append(r.wga)
    rows = []
    for (method, noise), values in sorted(cells.items()):
        arr = np.asarray(values, dtype=np.float64)
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(SummaryRow(method=method, noise_level=noise, mean=float(arr.mean()), std=std, count=arr.size))
    return rows

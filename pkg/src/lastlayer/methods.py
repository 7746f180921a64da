"""Retraining strategies over a frozen embedding: ERM, group-annotated
baselines (GUW, GDS), two-stage error-set methods (RAD, SELF), and their
label-spreading variants (kNN-RAD, kNN-SELF).

The two-stage methods share one idea: fit a deliberately biased identification
model, collect the rows it misclassifies (the error set), and give those rows
extra influence in a second fit.  The kNN-prefixed variants run majority-vote
label spreading over the embedding graph first and hand the cleaned labels to
the underlying method unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .data import EmbeddingDataset, GroupTable
from .errors import (
    DegenerateDataError,
    DegenerateSelectionError,
    ParameterError,
    ShapeError,
)
from .knn import SpreadConfig, build_knn_graph, spread_labels
from .linear import LinearModel, TrainConfig, finetune, per_example_loss, predict, train


@dataclass(frozen=True)
class ErrorSet:
    """Sorted row indices misclassified by an identification model."""

    indices: np.ndarray
    n: int

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise ShapeError(f"error-set indices must lie in [0, {self.n})")
        object.__setattr__(self, "indices", idx)
        idx.setflags(write=False)

    def __len__(self) -> int:
        return int(self.indices.size)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=bool)
        out[self.indices] = True
        return out


@dataclass(frozen=True)
class RadConfig:
    """Identification penalty, retraining penalty, and the upweight factor."""

    c_id: float
    c_retrain: float
    upweight: float = 10.0
    id_loss: str = "cross_entropy"
    alpha: float = 1.0
    max_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.upweight < 1.0:
            raise ParameterError(f"upweight must be >= 1, got {self.upweight}")
        if self.c_id < 0 or self.c_retrain < 0:
            raise ParameterError("penalties must be >= 0")


@dataclass(frozen=True)
class SelfConfig:
    """High-loss subset size, fine-tuning budget, and the balancing seed."""

    n_sub: int
    finetune_steps: int = 500
    learning_rate: float = 1e-3
    balance_seed: int = 0

    def __post_init__(self):
        if self.n_sub < 1:
            raise ParameterError(f"n_sub must be >= 1, got {self.n_sub}")
        if self.finetune_steps < 0:
            raise ParameterError(f"finetune_steps must be >= 0, got {self.finetune_steps}")


def _fit(dataset, c, weights=None, loss="cross_entropy", alpha=1.0, max_iters=500, tol=1e-8):
    cfg = TrainConfig(
        loss=loss,
        alpha=alpha,
        l1_penalty=c,
        example_weights=np.ones(dataset.n) if weights is None else weights,
        max_iters=max_iters,
        tol=tol,
    )
    return train(dataset.features, dataset.labels, cfg, num_classes=dataset.num_classes)


def run_erm(retrain: EmbeddingDataset, c: float, max_iters: int = 500, tol: float = 1e-8) -> LinearModel:
    """Uniformly weighted baseline fit."""
    return _fit(retrain, c, max_iters=max_iters, tol=tol)


def run_guw(
    retrain: EmbeddingDataset,
    groups: GroupTable,
    c: float,
    max_iters: int = 500,
    tol: float = 1e-8,
) -> LinearModel:
    """Group upweighting: row weight n / |group(row)|.

    Every group then contributes the same total weight (n each), which
    equalizes group influence without discarding data.
    """
    sizes = groups.sizes[groups.group_ids]
    if np.any(sizes <= 0):
        raise DegenerateDataError("a row maps to an empty group")
    weights = retrain.n / sizes.astype(np.float64)
    return _fit(retrain, c, weights=weights, max_iters=max_iters, tol=tol)


def run_gds(
    retrain: EmbeddingDataset,
    groups: GroupTable,
    c: float,
    seed: int,
    max_iters: int = 500,
    tol: float = 1e-8,
) -> LinearModel:
    """Group downsampling: keep n_min rows per group, then fit unweighted."""
    n_min = groups.n_min
    rng = np.random.default_rng(seed)
    kept = []
    for gid in groups.observed:
        idx = np.flatnonzero(groups.group_ids == gid)
        if idx.size > n_min:
            idx = rng.choice(idx, size=n_min, replace=False)
        kept.append(idx)
    kept = np.sort(np.concatenate(kept))
    return _fit(retrain.subset(kept), c, max_iters=max_iters, tol=tol)


def build_error_set(id_model: LinearModel, retrain: EmbeddingDataset) -> ErrorSet:
    """Rows where the identification model disagrees with the observed label."""
    pred = predict(id_model, retrain.features)
    return ErrorSet(indices=np.flatnonzero(pred != retrain.labels), n=retrain.n)


def run_rad(retrain: EmbeddingDataset, config: RadConfig):
    """Two-stage retraining: sparse identification model, then upweighted refit.

    Returns ``(model, error_set)``.  With ``upweight == 1`` the second stage
    degenerates to the uniform baseline.
    """
    id_model = _fit(
        retrain,
        config.c_id,
        loss=config.id_loss,
        alpha=config.alpha,
        max_iters=config.max_iters,
        tol=config.tol,
    )
    error_set = build_error_set(id_model, retrain)
    weights = np.ones(retrain.n)
    weights[error_set.indices] = config.upweight
    model = _fit(retrain, config.c_retrain, weights=weights, max_iters=config.max_iters, tol=config.tol)
    return model, error_set


def select_self_subset(retrain: EmbeddingDataset, base_model: LinearModel, config: SelfConfig):
    """Pick the fine-tuning rows: high-loss misclassifications, class-balanced.

    Returns ``(error_set, balanced_indices)``.  The ``n_sub`` highest-loss
    members of the error set are kept (loss ties break by row index), then
    each class is downsampled to the smallest per-class count using
    ``balance_seed``.  A class missing from the kept set is unrecoverable and
    raises, reporting the per-class counts.
    """
    if config.n_sub > retrain.n:
        raise ParameterError(f"n_sub={config.n_sub} exceeds the {retrain.n} available rows")
    error_set = build_error_set(base_model, retrain)
    if len(error_set) == 0:
        raise DegenerateSelectionError(
            f"error set is empty; per-class counts {[0] * retrain.num_classes}"
        )

    losses = per_example_loss(base_model, retrain.features[error_set.indices], retrain.labels[error_set.indices])
    order = np.lexsort((error_set.indices, -losses))
    kept = error_set.indices[order[: config.n_sub]]

    labels_kept = retrain.labels[kept]
    counts = np.bincount(labels_kept, minlength=retrain.num_classes)
    m = int(counts.min())
    if m == 0:
        raise DegenerateSelectionError(
            f"kept set misses a class entirely; per-class counts {counts.tolist()}"
        )
    rng = np.random.default_rng(config.balance_seed)
    balanced = []
    for cls in range(retrain.num_classes):
        idx_c = np.sort(kept[labels_kept == cls])
        if idx_c.size > m:
            idx_c = rng.choice(idx_c, size=m, replace=False)
        balanced.append(idx_c)
    return error_set, np.sort(np.concatenate(balanced))


def run_self(retrain: EmbeddingDataset, base_model: LinearModel, config: SelfConfig):
    """Misclassification-based correction fine-tuned from the base model.

    Keeps the ``n_sub`` highest-loss misclassified rows (ties broken by row
    index), downsamples them so every class appears equally often (seeded),
    and fine-tunes the base model on that balanced set.  Returns
    ``(model, error_set)``.
    """
    error_set, balanced = select_self_subset(retrain, base_model, config)
    model = finetune(
        base_model,
        retrain.features[balanced],
        retrain.labels[balanced],
        config.finetune_steps,
        config.learning_rate,
    )
    return model, error_set


def _spread_dataset(retrain: EmbeddingDataset, spread: SpreadConfig):
    graph = build_knn_graph(retrain.features, spread.k, spread.include_self)
    cleaned = spread_labels(graph, retrain.labels, retrain.num_classes, spread)
    return retrain.replace(labels=cleaned), cleaned


def run_knn_rad(retrain: EmbeddingDataset, spread: SpreadConfig, config: RadConfig):
    """Label spreading followed by the two-stage upweighted refit.

    Returns ``(model, error_set, cleaned_labels)``.
    """
    cleaned_ds, cleaned = _spread_dataset(retrain, spread)
    model, error_set = run_rad(cleaned_ds, config)
    return model, error_set, cleaned


def run_knn_self(retrain: EmbeddingDataset, base_model: LinearModel, spread: SpreadConfig, config: SelfConfig):
    """Label spreading followed by the misclassification correction.

    The high-loss selection inside sees only the cleaned labels.  Returns
    ``(model, error_set, cleaned_labels)``.
    """
    cleaned_ds, cleaned = _spread_dataset(retrain, spread)
    model, error_set = run_self(cleaned_ds, base_model, config)
    return model, error_set, cleaned


def error_set_composition(error_set: ErrorSet, groups: GroupTable, flip_mask) -> dict:
    """Bucket the error set by (clean/noisy) x (minority/majority) membership.

    A row counts as minority when its group is smaller than the median
    observed group size; ``flip_mask`` marks the noise-corrupted rows.  The
    four counts partition the error set.
    """
    mask = np.asarray(flip_mask, dtype=bool)
    if mask.shape != (error_set.n,) or groups.group_ids.shape != (error_set.n,):
        raise ShapeError("error set, groups, and flip mask must cover the same rows")
    median = float(np.median(groups.sizes[groups.sizes > 0]))
    minority = groups.sizes[groups.group_ids] < median
    idx = error_set.indices
    noisy = mask[idx]
    mino = minority[idx]
    return {
        "clean_minority": int(np.sum(~noisy & mino)),
        "noisy_majority": int(np.sum(noisy & ~mino)),
        "clean_majority": int(np.sum(~noisy & ~mino)),
        "noisy_minority": int(np.sum(noisy & mino)),
    }


def run_record(
    method: str,
    config,
    seed: int,
    error_set: Optional[ErrorSet] = None,
    composition: Optional[dict] = None,
    cleaned_accuracy: Optional[float] = None,
    model_path: Optional[str] = None,
) -> dict:
    """JSON-ready summary of one method invocation."""
    if hasattr(config, "__dataclass_fields__"):
        config = asdict(config)
    return {
        "method": method,
        "config": config,
        "seed": int(seed),
        "error_set_size": None if error_set is None else len(error_set),
        "composition": composition,
        "cleaned_label_accuracy": cleaned_accuracy,
        "model_path": model_path,
    }


__all__ = [
    "ErrorSet",
    "RadConfig",
    "SelfConfig",
    "run_erm",
    "run_guw",
    "run_gds",
    "build_error_set",
    "run_rad",
    "select_self_subset",
    "run_self",
    "run_knn_rad",
    "run_knn_self",
    "error_set_composition",
    "run_record",
]

"""Exact k-nearest-neighbor graphs and iterative majority-vote label spreading."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, ValidationError

TIE_POLICIES = ("assign_one", "keep_current")
VOTE_WEIGHTINGS = ("uniform", "distance")


@dataclass(frozen=True)
class KnnGraph:
    """Directed exact-kNN graph: row i points to its k nearest rows.

    Neighbor lists are sorted by ascending squared L2 distance; exact ties
    break toward the lower row index, except that with ``include_self`` row i
    itself always comes first in its own list.
    """

    neighbors: np.ndarray  # (n, k) int32
    distances: np.ndarray  # (n, k) float64, L2
    k: int
    include_self: bool

    def __post_init__(self):
        nb = np.ascontiguousarray(self.neighbors, dtype=np.int32)
        if nb.ndim != 2 or nb.shape[1] != self.k:
            raise ValidationError(f"neighbors must be (n, {self.k}), got {nb.shape}")
        if self.distances.shape != nb.shape:
            raise ValidationError("distances must match neighbors in shape")
        object.__setattr__(self, "neighbors", nb)
        nb.setflags(write=False)
        self.distances.setflags(write=False)

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class SpreadConfig:
    """Knobs for label spreading: neighbor count, rounds, and vote handling.

    ``tie_policy="assign_one"`` is the two-class rule where an exact half-half
    vote assigns class 1; ``"keep_current"`` is the multi-class plurality rule
    where a tied row keeps its previous label when possible.  ``weighting``
    only supports uniform votes; the "distance" value is reserved and rejected.
    """

    k: int
    rounds: int = 1
    include_self: bool = True
    tie_policy: str = "assign_one"
    weighting: str = "uniform"

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"k must be >= 1, got {self.k}")
        if self.rounds < 0:
            raise ParameterError(f"rounds must be >= 0, got {self.rounds}")
        if self.tie_policy not in TIE_POLICIES:
            raise ParameterError(f"tie_policy must be one of {TIE_POLICIES}")
        if self.weighting not in VOTE_WEIGHTINGS:
            raise ParameterError(f"weighting must be one of {VOTE_WEIGHTINGS}")


def build_knn_graph(
    features,
    k: int,
    include_self: bool = True,
    chunk_bytes: int = 1 << 26,
) -> KnnGraph:
    """Exact brute-force kNN over rows of ``features`` in L2 distance.

    Distances are computed from explicit coordinate differences in float64 and
    queries are processed in chunks sized by ``chunk_bytes``.  The output is
    deterministic: ties sort by lower row index (self first when included).
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain non-finite values")
    n, d = X.shape
    limit = n if include_self else n - 1
    if not (1 <= k <= limit):
        raise ParameterError(
            f"k must lie in [1, {limit}] for n={n} with include_self={include_self}, got {k}"
        )

    rows_per_chunk = max(1, int(chunk_bytes // max(1, n * d * 8)))
    neighbors = np.empty((n, k), dtype=np.int32)
    distances = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, rows_per_chunk):
        stop = min(n, start + rows_per_chunk)
        diff = X[None, :, :] - X[start:stop, None, :]
        d2 = (diff * diff).sum(axis=2)
        rows = np.arange(start, stop)
        if include_self:
            d2[rows - start, rows] = -1.0  # forces self to sort first
        else:
            d2[rows - start, rows] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        got = np.take_along_axis(d2, order, axis=1)
        got[got < 0.0] = 0.0  # restore the true self-distance
        neighbors[start:stop] = order
        distances[start:stop] = np.sqrt(got)
    return KnnGraph(neighbors=neighbors, distances=distances, k=k, include_self=include_self)


def spread_labels(graph: KnnGraph, labels, num_classes: int, config: SpreadConfig):
    """Replace each label by the majority vote of its neighbors, for T rounds.

    Rounds are synchronous: every row votes using the previous round's labels.
    Zero rounds return the input unchanged.
    """
    y = np.ascontiguousarray(labels, dtype=np.int32)
    if y.ndim != 1 or y.shape[0] != graph.n:
        raise ShapeError(f"labels must be a length-{graph.n} vector, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    if config.weighting == "distance":
        raise ParameterError("distance-weighted voting is reserved and not implemented")
    if config.tie_policy == "assign_one" and num_classes != 2:
        raise ParameterError("tie_policy 'assign_one' is defined for exactly two classes")

    cur = y.copy()
    rows = np.arange(graph.n)
    for _ in range(config.rounds):
        votes = cur[graph.neighbors]  # (n, k)
        if config.tie_policy == "assign_one":
            ones = votes.sum(axis=1, dtype=np.int64)
            cur = (2 * ones >= graph.k).astype(np.int32)
        else:
            counts = np.zeros((graph.n, num_classes), dtype=np.int64)
            np.add.at(counts, (rows[:, None], votes), 1)
            top = counts.max(axis=1)
            tied = counts == top[:, None]
            nxt = np.argmax(tied, axis=1).astype(np.int32)  # smallest tied id
            keep = tied[rows, cur]
            nxt[keep] = cur[keep]
            cur = nxt
    return cur


def measure_label_accuracy(predicted, clean) -> float:
    """Fraction of positions where the two label vectors agree exactly."""
    a = np.asarray(predicted)
    b = np.asarray(clean)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(a == b))


def write_graph_csv(graph: KnnGraph, path) -> None:
    """Dump the graph as (src, rank, dst, distance) rows for debugging."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "rank", "dst", "distance"])
        for i in range(graph.n):
            for r in range(graph.k):
                writer.writerow([i, r, int(graph.neighbors[i, r]), repr(float(graph.distances[i, r]))])

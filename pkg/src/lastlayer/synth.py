"""Synthetic spurious-correlation embedding generator and the k heuristic.

The generator mimics the geometry of late-layer embeddings: tight isotropic
Gaussian clusters, one per (class, domain) cell, with classes far apart and a
smaller domain offset inside each class.  A hierarchical mode splits each
class into a dominant cluster plus small satellite clusters parked near the
*opposite* class, reproducing the multi-cluster structure that makes
large-neighborhood label spreading fail.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset
from .errors import ParameterError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SynthConfig:
    """Geometry, sizes, and per-split correlation for the generator.

    ``correlation`` values give P(domain is class-aligned | class); the test
    split ignores them and is generated group-balanced.  ``class_sep``,
    ``domain_shift``, and ``subcluster_sep`` are measured in units of
    ``within_std``.  ``subcluster_sep`` defaults to half the class separation
    and ``satellite_mass`` is the fraction of each class living in satellite
    clusters when ``subclusters_per_class > 1``.
    """

    d: int = 32
    num_classes: int = 2
    num_domains: int = 2
    train_size: int = 4000
    val_size: int = 4000
    test_size: int = 4000
    train_correlation: float = 0.9
    val_correlation: float = 0.75
    class_sep: float = 8.0
    domain_shift: float = 2.0
    subclusters_per_class: int = 1
    subcluster_sep: float | None = None
    satellite_mass: float = 0.3
    within_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.num_domains < 2:
            raise ParameterError("need at least two classes and two domains")
        if min(self.train_size, self.val_size, self.test_size) < 1:
            raise ParameterError("all split sizes must be positive")
        for corr in (self.train_correlation, self.val_correlation):
            if not (0.5 <= corr < 1.0):
                raise ParameterError(f"correlation must lie in [0.5, 1), got {corr}")
        if self.class_sep <= 0 or self.within_std <= 0:
            raise ParameterError("class_sep and within_std must be positive")
        if self.domain_shift < 0:
            raise ParameterError("domain_shift must be >= 0")
        if self.subclusters_per_class < 1:
            raise ParameterError("subclusters_per_class must be >= 1")
        if self.subcluster_sep is not None and self.subcluster_sep <= 0:
            raise ParameterError("subcluster_sep must be positive")
        if not (0.0 < self.satellite_mass < 1.0):
            raise ParameterError("satellite_mass must lie in (0, 1)")
        if self.d < self._directions_needed():
            raise ParameterError(
                f"d={self.d} is too small for the requested geometry "
                f"({self._directions_needed()} orthogonal directions needed)"
            )

    def _directions_needed(self) -> int:
        m = 1 if self.num_classes == 2 else self.num_classes
        m += 1 if self.num_domains == 2 else self.num_domains
        m += self.num_classes * (self.subclusters_per_class - 1)
        return m

    @property
    def effective_subcluster_sep(self) -> float:
        return self.class_sep / 2.0 if self.subcluster_sep is None else self.subcluster_sep


def _orthonormal(rng: np.random.Generator, d: int, m: int) -> np.ndarray:
    """Deterministic random orthonormal columns (QR with positive diagonal)."""
    Q, R = np.linalg.qr(rng.standard_normal((d, m)))
    return Q * np.sign(np.diag(R))


def _allocate(total: int, weights) -> list[int]:
    """Split ``total`` into integer shares proportional to ``weights``.

    Largest-remainder rounding; ties go to the lower index.  Shares always sum
    to ``total``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    exact = total * weights / weights.sum()
    base = np.floor(exact).astype(int)
    rest = total - int(base.sum())
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base.tolist()


def _sub_centers(config: SynthConfig, dirs: np.ndarray) -> np.ndarray:
    """Cluster center for every (class, domain, subcluster) triple."""
    C, D, S = config.num_classes, config.num_domains, config.subclusters_per_class
    sigma = config.within_std
    col = 0

    class_axis = np.zeros((C, config.d))
    if C == 2:
        u = dirs[:, col]
        col += 1
        class_axis[0] = -0.5 * config.class_sep * sigma * u
        class_axis[1] = +0.5 * config.class_sep * sigma * u
    else:
        scale = config.class_sep * sigma / np.sqrt(2.0)
        for y in range(C):
            class_axis[y] = scale * dirs[:, col]
            col += 1

    domain_axis = np.zeros((D, config.d))
    if D == 2:
        v = dirs[:, col]
        col += 1
        domain_axis[0] = -0.5 * config.domain_shift * sigma * v
        domain_axis[1] = +0.5 * config.domain_shift * sigma * v
    else:
        scale = config.domain_shift * sigma / np.sqrt(2.0)
        for dm in range(D):
            domain_axis[dm] = scale * dirs[:, col]
            col += 1

    centers = np.zeros((C, D, S, config.d))
    sub_sep = config.effective_subcluster_sep * sigma
    for y in range(C):
        anchors = np.zeros((S, config.d))
        anchors[0] = class_axis[y]
        for s in range(1, S):
            # satellites sit a short hop away from the *other* side of the
            # class split, each along its own orthogonal direction
            opposite = class_axis[(y + 1) % C]
            anchors[s] = opposite + sub_sep * dirs[:, col]
            col += 1
        for dm in range(D):
            for s in range(S):
                centers[y, dm, s] = anchors[s] + domain_axis[dm]
    return centers


def _make_split(config, centers, rng, size: int, correlation, split_tag: str) -> EmbeddingDataset:
    C, D, S = config.num_classes, config.num_domains, config.subclusters_per_class
    class_sizes = _allocate(size, np.ones(C))

    if S == 1:
        sub_weights = [1.0]
    else:
        sat = config.satellite_mass / (S - 1)
        sub_weights = [1.0 - config.satellite_mass] + [sat] * (S - 1)

    blocks_y, blocks_d, blocks_s = [], [], []
    for y in range(C):
        if correlation is None:
            dom_sizes = _allocate(class_sizes[y], np.ones(D))
        else:
            aligned = y % D
            w = np.full(D, (1.0 - correlation) / (D - 1))
            w[aligned] = correlation
            dom_sizes = _allocate(class_sizes[y], w)
        for dm in range(D):
            for s, cnt in enumerate(_allocate(dom_sizes[dm], sub_weights)):
                if cnt:
                    blocks_y.append(np.full(cnt, y, dtype=np.int32))
                    blocks_d.append(np.full(cnt, dm, dtype=np.int32))
                    blocks_s.append(np.full(cnt, s, dtype=np.int32))

    ys = np.concatenate(blocks_y)
    ds = np.concatenate(blocks_d)
    ss = np.concatenate(blocks_s)
    perm = rng.permutation(size)
    ys, ds, ss = ys[perm], ds[perm], ss[perm]

    feats = centers[ys, ds, ss] + config.within_std * rng.standard_normal((size, config.d))
    return EmbeddingDataset(
        features=feats.astype(np.float32),
        labels=ys,
        num_classes=C,
        clean_labels=ys.copy(),
        domains=ds,
        split_tag=split_tag,
    )


def generate(config: SynthConfig) -> dict[str, EmbeddingDataset]:
    """Draw the train/val/test triple; deterministic given ``config.seed``.

    All labels are clean (``labels == clean_labels``); downstream noise is the
    caller's business.  Train and val follow their configured correlations,
    test is group-balanced.
    """
    ss = np.random.SeedSequence(config.seed).spawn(4)
    dirs = _orthonormal(np.random.default_rng(ss[0]), config.d, config._directions_needed())
    centers = _sub_centers(config, dirs)
    return {
        "train": _make_split(config, centers, np.random.default_rng(ss[1]), config.train_size, config.train_correlation, "train"),
        "val": _make_split(config, centers, np.random.default_rng(ss[2]), config.val_size, config.val_correlation, "train"),
        "test": _make_split(config, centers, np.random.default_rng(ss[3]), config.test_size, None, "test"),
    }


@dataclass(frozen=True)
class KBoundParams:
    """Inputs to the neighbor-count heuristic.

    ``lipschitz`` documents the smoothness constant appearing in the risk
    bound the heuristic comes from; it does not influence the recommendation
    (only the noise level and irreducible risk drive the scaling).
    """

    p: float
    bayes_risk: float = 0.0
    lipschitz: float = 1.0
    d: int = 32
    n: int = 0
    scale_constant: float = 72.0
    k_min: int = 8

    def __post_init__(self):
        if not (0.0 <= self.p < 0.5):
            raise ParameterError(f"noise level must lie in [0, 0.5), got {self.p}")
        if not (0.0 <= self.bayes_risk < 0.5):
            raise ParameterError(f"bayes_risk must lie in [0, 0.5), got {self.bayes_risk}")
        if self.lipschitz <= 0:
            raise ParameterError("lipschitz must be positive")
        if self.scale_constant <= 0:
            raise ParameterError("scale_constant must be positive")


def recommend_k(params: KBoundParams) -> int:
    """Suggested neighbor count: grows like (risk + p/(1-2p))^2, never below 8.

    The result is forced odd (two-class votes cannot tie) and is
    non-decreasing in both the noise level and the irreducible risk.
    """
    term = params.bayes_risk + params.p / (1.0 - 2.0 * params.p)
    k = max(params.k_min, int(np.ceil(params.scale_constant * term * term)))
    if k % 2 == 0:
        k += 1
    return k

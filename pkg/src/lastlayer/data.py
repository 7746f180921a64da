"""Dataset containers, the EMB1 binary format, label-noise injection, and splits.

The central type is :class:`EmbeddingDataset`: a frozen bundle of latent
features with observed labels and optional clean-label / domain annotations.
Everything downstream (graph building, retraining, evaluation) consumes these
bundles read-only, so instances are immutable after construction and all
randomized operations take explicit seeds.
"""

from __future__ import annotations

import csv
import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    MissingAnnotationError,
    ParameterError,
    ShapeError,
    ValidationError,
)

SPLIT_TAGS = ("train", "retrain", "holdout", "test")

_MAGIC = b"EMB1"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQII")
_FLAG_DOMAINS = 0x1
_FLAG_CLEAN = 0x2


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _check_ids(arr, n: int, num_classes: int, what: str) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.int32)
    if out.ndim != 1 or out.shape[0] != n:
        raise ValidationError(f"{what} must be a length-{n} vector, got shape {out.shape}")
    if out.size and (out.min() < 0 or out.max() >= num_classes):
        raise ValidationError(f"{what} must lie in [0, {num_classes})")
    return out


@dataclass(frozen=True)
class EmbeddingDataset:
    """n x d latent features plus observed labels and optional annotations.

    ``labels`` holds the observed (possibly noisy) class ids.  ``clean_labels``
    and ``domains``, when present, must cover every row.  Instances validate
    their invariants on construction and are immutable afterwards.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    clean_labels: np.ndarray | None = None
    domains: np.ndarray | None = None
    split_tag: str = "train"

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise ValidationError(f"features must be 2-D, got shape {feats.shape}")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise ValidationError(f"need n >= 1 and d >= 1, got {n} x {d}")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        if self.num_classes < 1:
            raise ValidationError(f"num_classes must be positive, got {self.num_classes}")
        if self.split_tag not in SPLIT_TAGS:
            raise ValidationError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")

        object.__setattr__(self, "features", _freeze(feats))
        object.__setattr__(self, "labels", _freeze(_check_ids(self.labels, n, self.num_classes, "labels")))
        if self.clean_labels is not None:
            clean = _check_ids(self.clean_labels, n, self.num_classes, "clean_labels")
            object.__setattr__(self, "clean_labels", _freeze(clean))
        if self.domains is not None:
            doms = np.ascontiguousarray(self.domains, dtype=np.int32)
            if doms.ndim != 1 or doms.shape[0] != n:
                raise ValidationError(f"domains must be a length-{n} vector, got shape {doms.shape}")
            if doms.min() < 0:
                raise ValidationError("domain ids must be non-negative")
            object.__setattr__(self, "domains", _freeze(doms))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def num_domains(self) -> int:
        if self.domains is None:
            raise MissingAnnotationError("dataset has no domain annotations")
        return int(self.domains.max()) + 1

    def replace(self, **changes) -> "EmbeddingDataset":
        """Return a copy with the given fields swapped out (re-validated)."""
        return dataclasses.replace(self, **changes)

    def subset(self, indices, split_tag: str | None = None) -> "EmbeddingDataset":
        """Return the row subset at ``indices`` (order preserved)."""
        idx = np.asarray(indices, dtype=np.int64)
        return EmbeddingDataset(
            features=self.features[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            clean_labels=None if self.clean_labels is None else self.clean_labels[idx],
            domains=None if self.domains is None else self.domains[idx],
            split_tag=self.split_tag if split_tag is None else split_tag,
        )


@dataclass(frozen=True)
class GroupTable:
    """Partition of rows into (class, domain) groups.

    ``sizes`` spans the full class x domain grid; pairs absent from the data
    have size zero and are not counted as listed groups.  ``n_min`` is the
    smallest observed group.
    """

    group_ids: np.ndarray
    sizes: np.ndarray
    num_classes: int
    num_domains: int

    def __post_init__(self):
        gids = np.ascontiguousarray(self.group_ids, dtype=np.int32)
        num_groups = self.num_classes * self.num_domains
        if gids.size and (gids.min() < 0 or gids.max() >= num_groups):
            raise ValidationError(f"group ids must lie in [0, {num_groups})")
        sizes = np.ascontiguousarray(self.sizes, dtype=np.int64)
        if sizes.shape != (num_groups,):
            raise ValidationError(f"sizes must have shape ({num_groups},)")
        if not np.array_equal(np.bincount(gids, minlength=num_groups), sizes):
            raise ValidationError("sizes do not match the group-id counts")
        object.__setattr__(self, "group_ids", _freeze(gids))
        object.__setattr__(self, "sizes", _freeze(sizes))

    @property
    def num_groups(self) -> int:
        return self.num_classes * self.num_domains

    @property
    def observed(self) -> np.ndarray:
        """Ids of groups that actually occur."""
        return np.flatnonzero(self.sizes > 0)

    @property
    def n_min(self) -> int:
        return int(self.sizes[self.sizes > 0].min())

    def group_name(self, gid: int) -> str:
        return f"(class={gid // self.num_domains}, domain={gid % self.num_domains})"


@dataclass(frozen=True)
class NoiseSpec:
    """Symmetric label-noise parameters: flip probability and RNG seed."""

    p: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p < 0.5):
            raise ParameterError(f"noise level must lie in [0, 0.5), got {self.p}")


def inject_symmetric_noise(labels, num_classes: int, spec: NoiseSpec):
    """Flip each label with probability ``spec.p``, uniformly to another class.

    Returns ``(noisy_labels, flip_mask)``.  For two classes a flip always picks
    the other class; for more classes the replacement is uniform over the
    remaining ``num_classes - 1`` ids, so ``p`` is exactly the mislabel
    probability.  Deterministic given the seed.
    """
    y = np.ascontiguousarray(labels, dtype=np.int32)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
    rng = np.random.default_rng(spec.seed)
    flip = rng.random(y.shape[0]) < spec.p
    offsets = rng.integers(1, max(num_classes, 2), size=y.shape[0])
    noisy = y.copy()
    noisy[flip] = (y[flip] + offsets[flip].astype(np.int32)) % num_classes
    return noisy, flip


def apply_noise(dataset: EmbeddingDataset, spec: NoiseSpec):
    """Return ``(noisy_dataset, flip_mask)`` with originals kept as clean labels.

    Only ``labels`` changes; features, domains, and any pre-existing clean
    labels are carried over untouched.
    """
    noisy, mask = inject_symmetric_noise(dataset.labels, dataset.num_classes, spec)
    clean = dataset.clean_labels if dataset.clean_labels is not None else dataset.labels
    return dataset.replace(labels=noisy, clean_labels=clean), mask


def derive_groups(dataset: EmbeddingDataset, use_clean: bool = False) -> GroupTable:
    """Assign each row the group id ``label * num_domains + domain``.

    With ``use_clean=True`` the clean labels define the class part (the
    oracle-access convention for group-annotated baselines and evaluation).
    """
    if dataset.domains is None:
        raise MissingAnnotationError("derive_groups needs domain annotations")
    if use_clean:
        if dataset.clean_labels is None:
            raise MissingAnnotationError("use_clean=True needs clean labels")
        labels = dataset.clean_labels
    else:
        labels = dataset.labels
    num_domains = dataset.num_domains
    gids = labels.astype(np.int32) * num_domains + dataset.domains
    sizes = np.bincount(gids, minlength=dataset.num_classes * num_domains).astype(np.int64)
    return GroupTable(group_ids=gids, sizes=sizes, num_classes=dataset.num_classes, num_domains=num_domains)


def split_validation(dataset: EmbeddingDataset, fraction: float, seed: int):
    """Split into a retraining half and a clean holdout, stratified by class.

    The retraining part receives ``ceil(fraction * n)`` rows; each class lands
    within one row of its original proportion on both sides.  The holdout is
    meant for model selection only: when clean labels exist they become its
    observed labels.  Deterministic given the seed.
    """
    if not (0.0 < fraction < 1.0):
        raise ParameterError(f"fraction must lie in (0, 1), got {fraction}")
    n = dataset.n
    if n < 2:
        raise ParameterError("need at least two rows to split")

    target = int(np.ceil(fraction * n))
    classes = np.unique(dataset.labels)
    exact = {int(c): fraction * int((dataset.labels == c).sum()) for c in classes}
    take = {c: int(np.floor(t)) for c, t in exact.items()}
    leftover = target - sum(take.values())
    # distribute the remainder by largest fractional part, ties to low class id
    order = sorted(exact, key=lambda c: (-(exact[c] - take[c]), c))
    for c in order[:leftover]:
        take[c] += 1

    rng = np.random.default_rng(seed)
    retrain_idx = []
    for c in sorted(exact):
        idx_c = np.flatnonzero(dataset.labels == c)
        perm = rng.permutation(idx_c)
        retrain_idx.append(perm[: take[c]])
    retrain_idx = np.sort(np.concatenate(retrain_idx))
    mask = np.zeros(n, dtype=bool)
    mask[retrain_idx] = True
    holdout_idx = np.flatnonzero(~mask)

    retrain = dataset.subset(retrain_idx, split_tag="retrain")
    holdout = dataset.subset(holdout_idx, split_tag="holdout")
    if holdout.clean_labels is not None:
        holdout = holdout.replace(labels=holdout.clean_labels)
    return retrain, holdout


# ---------------------------------------------------------------------------
# EMB1 binary format
#
#   bytes 0-3  magic "EMB1"
#   u32        version (= 1)
#   u64        n
#   u64        d
#   u32        num_classes
#   u32        flags (bit0: domains present, bit1: clean labels present)
#   n*d f32    features, row-major
#   n   i32    labels
#   n   i32    domains       (if bit0)
#   n   i32    clean labels  (if bit1)
#
# All fields little-endian.
# ---------------------------------------------------------------------------


def save_embeddings(dataset: EmbeddingDataset, path) -> None:
    """Write the dataset in the EMB1 binary format."""
    flags = 0
    if dataset.domains is not None:
        flags |= _FLAG_DOMAINS
    if dataset.clean_labels is not None:
        flags |= _FLAG_CLEAN
    parts = [
        _HEADER.pack(_MAGIC, _VERSION, dataset.n, dataset.d, dataset.num_classes, flags),
        np.ascontiguousarray(dataset.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(dataset.labels, dtype="<i4").tobytes(),
    ]
    if dataset.domains is not None:
        parts.append(np.ascontiguousarray(dataset.domains, dtype="<i4").tobytes())
    if dataset.clean_labels is not None:
        parts.append(np.ascontiguousarray(dataset.clean_labels, dtype="<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_embeddings(path, split_tag: str = "train") -> EmbeddingDataset:
    """Read an EMB1 file back into an :class:`EmbeddingDataset`.

    The file format carries no split tag, so the caller supplies one.  Raises
    ``FormatError`` for a bad magic/version/flag layout and ``ValidationError``
    when sizes or values are inconsistent.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"file too short for an EMB1 header ({len(blob)} bytes)")
    magic, version, n, d, num_classes, flags = _HEADER.unpack_from(blob, 0)
    if magic != _MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported version {version}")
    if flags & ~(_FLAG_DOMAINS | _FLAG_CLEAN):
        raise FormatError(f"unknown flag bits in {flags:#x}")
    if n < 1 or d < 1:
        raise ValidationError(f"need n >= 1 and d >= 1, got n={n}, d={d}")

    extra = 1 + bool(flags & _FLAG_DOMAINS) + bool(flags & _FLAG_CLEAN)
    expected = _HEADER.size + 4 * n * d + 4 * n * extra  # python ints: no overflow
    if expected != len(blob):
        raise ValidationError(f"file holds {len(blob)} bytes but header implies {expected}")

    off = _HEADER.size
    feats = np.frombuffer(blob, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    if not np.all(np.isfinite(feats)):
        raise ValidationError("features contain non-finite values")
    off += 4 * n * d
    labels = np.frombuffer(blob, dtype="<i4", count=n, offset=off)
    off += 4 * n
    domains = None
    if flags & _FLAG_DOMAINS:
        domains = np.frombuffer(blob, dtype="<i4", count=n, offset=off)
        off += 4 * n
    clean = None
    if flags & _FLAG_CLEAN:
        clean = np.frombuffer(blob, dtype="<i4", count=n, offset=off)
    return EmbeddingDataset(
        features=feats,
        labels=labels,
        num_classes=num_classes,
        clean_labels=clean,
        domains=domains,
        split_tag=split_tag,
    )


# ---------------------------------------------------------------------------
# CSV mirror: header "f0,...,f{d-1},label[,domain][,clean_label]"
# ---------------------------------------------------------------------------


def save_csv(dataset: EmbeddingDataset, path) -> None:
    """Write the dataset as CSV for interoperability with external tools."""
    header = [f"f{j}" for j in range(dataset.d)] + ["label"]
    if dataset.domains is not None:
        header.append("domain")
    if dataset.clean_labels is not None:
        header.append("clean_label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row.append(int(dataset.labels[i]))
            if dataset.domains is not None:
                row.append(int(dataset.domains[i]))
            if dataset.clean_labels is not None:
                row.append(int(dataset.clean_labels[i]))
            writer.writerow(row)


def load_csv(path, num_classes: int | None = None, split_tag: str = "train") -> EmbeddingDataset:
    """Read the CSV mirror format.

    An annotation column consisting entirely of -1 is treated as absent (the
    on-file encoding of "no annotation"); -1 never appears in memory.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty CSV file") from None
        rows = list(reader)
    if not rows:
        raise FormatError("CSV has a header but no data rows")

    d = sum(1 for name in header if name.startswith("f"))
    expected = [f"f{j}" for j in range(d)] + ["label"]
    has_domain = "domain" in header
    has_clean = "clean_label" in header
    if has_domain:
        expected.append("domain")
    if has_clean:
        expected.append("clean_label")
    if header != expected:
        raise FormatError(f"unexpected CSV header {header}")

    try:
        feats = np.array([[float(v) for v in row[:d]] for row in rows], dtype=np.float32)
        cols = np.array([[int(v) for v in row[d:]] for row in rows], dtype=np.int32)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed CSV row: {exc}") from None

    labels = cols[:, 0]
    pos = 1
    domains = None
    if has_domain:
        domains = cols[:, pos]
        pos += 1
        if np.all(domains == -1):
            domains = None
        elif np.any(domains == -1):
            raise ValidationError("domain column mixes -1 (absent) with real ids")
    clean = None
    if has_clean:
        clean = cols[:, pos]
        if np.all(clean == -1):
            clean = None
        elif np.any(clean == -1):
            raise ValidationError("clean_label column mixes -1 (absent) with real ids")

    if num_classes is None:
        num_classes = int(labels.max()) + 1
        if clean is not None:
            num_classes = max(num_classes, int(clean.max()) + 1)
    return EmbeddingDataset(
        features=feats,
        labels=labels,
        num_classes=num_classes,
        clean_labels=clean,
        domains=domains,
        split_tag=split_tag,
    )

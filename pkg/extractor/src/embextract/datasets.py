"""Dataset adapters: resolve (image path, label, domain) rows per split.

Every adapter returns ``{split_name: list[Record]}`` with the records sorted
by file name, so extraction order (and therefore output bytes) never depends
on directory listing order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import MissingInputError

DATASETS = ("custom", "waterbirds", "celeba", "cmnist", "civilcomments")


@dataclass(frozen=True)
class Record:
    path: Path
    label: int
    domain: int | None
    text: str | None = None


def _read_csv(path: Path):
    if not path.is_file():
        raise MissingInputError(f"metadata file not found: {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_custom(root: Path) -> dict[str, list[Record]]:
    """Folder with a metadata.csv: filename,split,label[,domain] columns."""
    rows = _read_csv(root / "metadata.csv")
    need = {"filename", "split", "label"}
    if not rows:
        raise MissingInputError("metadata.csv has no data rows")
    if not need.issubset(rows[0].keys()):
        raise MissingInputError(
            f"metadata.csv must have columns {sorted(need)}, got {sorted(rows[0].keys())}"
        )
    splits: dict[str, list[Record]] = {}
    for row in rows:
        img = root / row["filename"]
        if not img.is_file():
            raise MissingInputError(f"image listed in metadata.csv is missing: {img}")
        rec = Record(
            path=img,
            label=int(row["label"]),
            domain=int(row["domain"]) if row.get("domain") not in (None, "") else None,
        )
        splits.setdefault(row["split"], []).append(rec)
    return {name: sorted(recs, key=lambda r: r.path.name) for name, recs in sorted(splits.items())}


_WB_SPLITS = {0: "train", 1: "val", 2: "test"}


def load_waterbirds(root: Path) -> dict[str, list[Record]]:
    """Standard layout: metadata.csv with img_filename, y, split, place."""
    rows = _read_csv(root / "metadata.csv")
    splits: dict[str, list[Record]] = {}
    for row in rows:
        img = root / row["img_filename"]
        if not img.is_file():
            raise MissingInputError(f"waterbirds image missing: {img}")
        split = _WB_SPLITS[int(row["split"])]
        splits.setdefault(split, []).append(
            Record(path=img, label=int(row["y"]), domain=int(row["place"]))
        )
    return {name: sorted(recs, key=lambda r: str(r.path)) for name, recs in sorted(splits.items())}


def load_celeba(root: Path, label_attr: str = "Blond_Hair", domain_attr: str = "Male") -> dict[str, list[Record]]:
    """Standard layout: img_align_celeba/ plus the attribute and partition lists."""
    attr_path = root / "list_attr_celeba.txt"
    part_path = root / "list_eval_partition.txt"
    img_dir = root / "img_align_celeba"
    for p in (attr_path, part_path):
        if not p.is_file():
            raise MissingInputError(f"celeba annotation file missing: {p}")
    if not img_dir.is_dir():
        raise MissingInputError(f"celeba image folder missing: {img_dir}")

    lines = attr_path.read_text().splitlines()
    header = lines[1].split()
    try:
        label_col = header.index(label_attr)
        domain_col = header.index(domain_attr)
    except ValueError as exc:
        raise MissingInputError(f"attribute not in header: {exc}") from None

    partition = {}
    for line in part_path.read_text().splitlines():
        name, part = line.split()
        partition[name] = int(part)

    splits: dict[str, list[Record]] = {}
    names = {0: "train", 1: "val", 2: "test"}
    for line in lines[2:]:
        parts = line.split()
        fname = parts[0]
        values = parts[1:]
        img = img_dir / fname
        if not img.is_file():
            raise MissingInputError(f"celeba image missing: {img}")
        split = names[partition[fname]]
        label = 1 if values[label_col] == "1" else 0
        domain = 1 if values[domain_col] == "1" else 0
        splits.setdefault(split, []).append(Record(path=img, label=label, domain=domain))
    return {name: sorted(recs, key=lambda r: r.path.name) for name, recs in sorted(splits.items())}


def load_civilcomments(root: Path) -> dict[str, list[Record]]:
    """WILDS-style CSV: comment_text, toxicity, identity_any, split columns."""
    rows = _read_csv(root / "all_data_with_identities.csv")
    splits: dict[str, list[Record]] = {}
    for i, row in enumerate(rows):
        rec = Record(
            path=root / f"row{i}",
            label=1 if float(row["toxicity"]) >= 0.5 else 0,
            domain=1 if float(row.get("identity_any", 0.0)) >= 0.5 else 0,
            text=row["comment_text"],
        )
        splits.setdefault(row["split"], []).append(rec)
    return dict(sorted(splits.items()))


def load_dataset(name: str, root) -> dict[str, list[Record]]:
    root = Path(root)
    if not root.exists():
        raise MissingInputError(f"dataset root does not exist: {root}")
    if name == "custom" or name == "cmnist":
        # cmnist variants are distributed as generated folders; same layout
        return load_custom(root)
    if name == "waterbirds":
        return load_waterbirds(root)
    if name == "celeba":
        return load_celeba(root)
    if name == "civilcomments":
        return load_civilcomments(root)
    raise MissingInputError(f"unknown dataset {name!r}; choose from {DATASETS}")

"""The one-shot extraction pipeline: dataset -> backbone -> EMB1 + manifest."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import load_backbone
from .datasets import load_dataset
from .emb1 import read_emb1_header, write_emb1
from .errors import IntegrityError, MissingInputError


@dataclass(frozen=True)
class ExtractSpec:
    """What to extract: dataset, backbone checkpoint, splits, and output."""

    dataset: str
    data_root: str
    backbone: str
    checkpoint: str
    out_dir: str
    splits: tuple = ()  # empty means every split the dataset defines
    batch_size: int = 32
    image_size: int = 224
    expect_d: int | None = None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def extract(spec: ExtractSpec) -> dict:
    """Run the backbone over every requested split and write EMB1 files.

    Returns the manifest (also written to ``manifest.json``): per split the
    file name, row count, embedding width, and SHA-256 of the bytes.  The
    classifier head, when the backbone carries one, lands next to the
    embeddings as ``head.csv`` + sidecar in the shared linear-model format.
    """
    splits = load_dataset(spec.dataset, spec.data_root)
    if spec.splits:
        missing = [s for s in spec.splits if s not in splits]
        if missing:
            raise MissingInputError(f"dataset has no split(s) {missing}; found {sorted(splits)}")
        splits = {name: splits[name] for name in spec.splits}
    if not splits:
        raise MissingInputError("dataset defines no splits")

    backbone = load_backbone(spec.backbone, spec.checkpoint)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    num_classes = 1 + max(r.label for recs in splits.values() for r in recs)
    manifest = {
        "dataset": spec.dataset,
        "backbone": spec.backbone,
        "checkpoint": str(spec.checkpoint),
        "num_classes": num_classes,
        "files": {},
        "head": None,
    }

    for name, records in splits.items():
        if backbone.is_text:
            feats = backbone.embed_texts([r.text for r in records], spec.batch_size)
        else:
            feats = backbone.embed_images([r.path for r in records], spec.image_size, spec.batch_size)
        d = feats.shape[1]
        if spec.expect_d is not None and d != spec.expect_d:
            raise IntegrityError(f"backbone produced d={d}, expected d={spec.expect_d}")
        labels = np.array([r.label for r in records], dtype=np.int32)
        domains = None
        if all(r.domain is not None for r in records):
            domains = np.array([r.domain for r in records], dtype=np.int32)
        path = out_dir / f"{name}.emb1"
        write_emb1(path, feats, labels, num_classes, domains=domains, clean_labels=labels)
        got_n, got_d, _, _ = read_emb1_header(path)
        if (got_n, got_d) != (len(records), d):
            raise IntegrityError(f"{path} header reads ({got_n}, {got_d}), wrote ({len(records)}, {d})")
        manifest["files"][name] = {"path": path.name, "n": len(records), "d": d, "sha256": _sha256(path)}

    widths = {info["d"] for info in manifest["files"].values()}
    if len(widths) != 1:
        raise IntegrityError(f"splits disagree on embedding width: {sorted(widths)}")

    if backbone.head is not None:
        head_path = out_dir / "head.csv"
        _write_head(head_path, *backbone.head)
        manifest["head"] = head_path.name

    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _write_head(path: Path, weights: np.ndarray, bias: np.ndarray) -> None:
    """Linear-model dump: (d+1) x C CSV (bias last) plus a JSON sidecar."""
    lines = [",".join(repr(float(v)) for v in row) for row in weights]
    lines.append(",".join(repr(float(v)) for v in bias))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {"num_classes": int(weights.shape[1]), "d": int(weights.shape[0]), "loss": "cross_entropy"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")

"""Backbone loading and deterministic feature extraction.

Supported backbone identifiers:

* ``torchscript`` — a scripted/traced module taking a (B, 3, H, W) float
  image batch and returning (B, d) features (4-D outputs are average-pooled).
* ``torchscript-text`` — a scripted module taking a list of strings.
* ``resnet18`` / ``resnet50`` — torchvision architectures restored from a
  local state-dict checkpoint; features are taken before the final fully
  connected layer, which is exported separately as the classifier head.

Everything runs in eval mode under ``no_grad`` with a fixed preprocessing
pipeline, so extraction is deterministic for a given checkpoint.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import MissingInputError

BACKBONES = ("torchscript", "torchscript-text", "resnet18", "resnet50")

_IMAGENET_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_IMAGENET_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


def preprocess_image(path: Path, image_size: int) -> torch.Tensor:
    """Resize-shorter-side, center crop, scale to [0,1], normalize."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = (image_size * 256) // 224
        if w < h:
            new = (scale, max(1, round(h * scale / w)))
        else:
            new = (max(1, round(w * scale / h)), scale)
        img = img.resize(new, Image.BILINEAR)
        left = (img.size[0] - image_size) // 2
        top = (img.size[1] - image_size) // 2
        img = img.crop((left, top, left + image_size, top + image_size))
        arr = np.asarray(img, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr).permute(2, 0, 1)
    return (tensor - _IMAGENET_MEAN) / _IMAGENET_STD


class Backbone:
    """A frozen feature extractor plus (optionally) its classifier head."""

    def __init__(self, module, is_text: bool = False, head: tuple | None = None):
        self.module = module.eval()
        self.is_text = is_text
        self.head = head  # (weights (d, C), bias (C,)) or None

    @torch.no_grad()
    def embed_images(self, paths, image_size: int, batch_size: int) -> np.ndarray:
        out = []
        for start in range(0, len(paths), batch_size):
            batch = torch.stack([preprocess_image(p, image_size) for p in paths[start:start + batch_size]])
            feats = self.module(batch)
            if feats.dim() == 4:
                feats = feats.mean(dim=(2, 3))
            if feats.dim() != 2:
                raise MissingInputError(f"backbone returned a {feats.dim()}-D tensor; expected (batch, d)")
            out.append(feats.float().cpu().numpy())
        return np.concatenate(out, axis=0)

    @torch.no_grad()
    def embed_texts(self, texts, batch_size: int) -> np.ndarray:
        out = []
        for start in range(0, len(texts), batch_size):
            feats = self.module(list(texts[start:start + batch_size]))
            if feats.dim() != 2:
                raise MissingInputError(f"text backbone returned a {feats.dim()}-D tensor; expected (batch, d)")
            out.append(feats.float().cpu().numpy())
        return np.concatenate(out, axis=0)


def _load_resnet(arch: str, checkpoint: Path) -> Backbone:
    from torchvision import models

    state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    state = { (k[len("module."):] if k.startswith("module.") else k): v for k, v in state.items() }

    model = models.resnet18() if arch == "resnet18" else models.resnet50()
    fc_w = state.get("fc.weight")
    if fc_w is not None and fc_w.shape[0] != model.fc.out_features:
        model.fc = torch.nn.Linear(model.fc.in_features, fc_w.shape[0])
    missing, unexpected = model.load_state_dict(state, strict=False)
    if any(not k.startswith("fc.") for k in missing) or unexpected:
        raise MissingInputError(
            f"checkpoint does not match {arch}: missing {missing[:3]}, unexpected {unexpected[:3]}"
        )
    head = (
        model.fc.weight.detach().numpy().T.astype(np.float64),
        model.fc.bias.detach().numpy().astype(np.float64),
    )
    model.fc = torch.nn.Identity()
    return Backbone(model, head=head)


def load_backbone(identifier: str, checkpoint) -> Backbone:
    path = Path(checkpoint)
    if not path.is_file():
        raise MissingInputError(f"checkpoint not found: {path}")
    if identifier == "torchscript":
        return Backbone(torch.jit.load(str(path), map_location="cpu"))
    if identifier == "torchscript-text":
        return Backbone(torch.jit.load(str(path), map_location="cpu"), is_text=True)
    if identifier in ("resnet18", "resnet50"):
        return _load_resnet(identifier, path)
    raise MissingInputError(f"unknown backbone {identifier!r}; choose from {BACKBONES}")

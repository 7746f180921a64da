"""Shared builders for hand-constructed datasets and models."""

import numpy as np

from lastlayer.data import EmbeddingDataset
from lastlayer.linear import LinearModel


def onehot_dataset(predictions, labels, num_classes, domains=None, clean=None):
    """Dataset whose rows are scaled one-hot vectors of ``predictions``.

    Paired with ``identity_model``, the model's prediction on row i is exactly
    ``predictions[i]`` — handy for constructing known error sets.
    """
    preds = np.asarray(predictions)
    feats = np.zeros((len(preds), num_classes), dtype=np.float32)
    feats[np.arange(len(preds)), preds] = 10.0
    return EmbeddingDataset(
        features=feats,
        labels=np.asarray(labels, dtype=np.int32),
        num_classes=num_classes,
        clean_labels=None if clean is None else np.asarray(clean, dtype=np.int32),
        domains=None if domains is None else np.asarray(domains, dtype=np.int32),
    )


def identity_model(num_classes):
    return LinearModel(weights=np.eye(num_classes), bias=np.zeros(num_classes))

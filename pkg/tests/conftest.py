import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from lastlayer.data import EmbeddingDataset


@pytest.fixture
def tiny_dataset():
    """6 rows, 2-D, two classes, two domains, clean labels present."""
    rng = np.random.default_rng(42)
    feats = rng.standard_normal((6, 2)).astype(np.float32)
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int32)
    domains = np.array([0, 1, 0, 1, 0, 1], dtype=np.int32)
    return EmbeddingDataset(
        features=feats,
        labels=labels,
        num_classes=2,
        clean_labels=labels.copy(),
        domains=domains,
    )

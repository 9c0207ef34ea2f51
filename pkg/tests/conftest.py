from __future__ import annotations

import numpy as np
import pytest

from bmm import FeatureMatrix


def make_features(values, prefix="p", label="set-a") -> FeatureMatrix:
    """FeatureMatrix from an array with generated ids and a constant label."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 1:
        values = values[:, None]
    n = values.shape[0]
    return FeatureMatrix(
        values=values,
        sample_ids=[f"{prefix}{i}" for i in range(n)],
        dataset_labels=[label] * n,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

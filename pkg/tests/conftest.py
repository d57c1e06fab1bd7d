from __future__ import annotations

import numpy as np
import pytest

from opid.ingest import SynthConfig, generate_synthetic
from opid.model import Batch, FeatureSchema, one_hot_encode


def random_cstage_stream(rng, n_batches, n, d_v, d_s, c):
    """Standard-normal batches with uniformly random labels."""
    batches = []
    for _ in range(n_batches):
        labels = one_hot_encode(rng.integers(0, c, size=n), c)
        batches.append(
            Batch.cstage(
                vanished=rng.standard_normal((n, d_v)),
                survived=rng.standard_normal((n, d_s)),
                labels=labels,
            )
        )
    return batches


@pytest.fixture
def small_schema():
    return FeatureSchema(vanished=2, survived=3, augmented=2, classes=2)


@pytest.fixture
def synth_instance():
    """A modest separable-ish synthetic problem shared by several tests."""
    schema = FeatureSchema(vanished=4, survived=6, augmented=3, classes=3)
    cfg = SynthConfig(
        schema=schema,
        batches=5,
        batch_size=30,
        estage_size=40,
        separation=3.0,
        noise=0.7,
        seed=11,
    )
    cbatches, etrain, etest = generate_synthetic(cfg)
    return schema, cfg, cbatches, etrain, etest


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from contexthmm import (ContextObservation, Dataset, FeatureDef, FeatureSchema,
                        ModelParams, ObservationSequence)
from contexthmm.params import value_offsets


def random_schema(rng, max_features=3, max_values=3) -> FeatureSchema:
    F = int(rng.integers(1, max_features + 1))
    defs = []
    for f in range(1, F + 1):
        V = int(rng.integers(1, max_values + 1))
        defs.append(FeatureDef(f, f"f{f}", V, tuple(f"f{f}v{v}" for v in range(V))))
    return FeatureSchema(tuple(defs))


def random_params(rng, K, schema, labels=()) -> ModelParams:
    counts = schema.value_counts
    offs = value_offsets(counts)
    phi = np.empty((K, offs[-1]))
    for k in range(K):
        for f in range(len(counts)):
            phi[k, offs[f]:offs[f + 1]] = rng.dirichlet(np.ones(counts[f]))
    return ModelParams(
        pi=rng.dirichlet(np.ones(K)),
        rho=np.vstack([rng.dirichlet(np.ones(K)) for _ in range(K)]),
        theta=rng.uniform(0.2, 1.0, size=(K, schema.F)),
        phi=phi,
        value_counts=counts,
        user_labels=tuple(labels),
    )


def random_dataset(rng, schema, T, M, missing=0.3, start_ts=0, period=3600) -> Dataset:
    seqs = []
    for uid in range(1, M + 1):
        obs = []
        for t in range(T):
            pairs = []
            for f in range(1, schema.F + 1):
                if rng.random() >= missing:
                    v = int(rng.integers(0, schema.feature(f).cardinality))
                    pairs.append((f, v))
            obs.append(ContextObservation(start_ts + t * period, uid, tuple(pairs)))
        seqs.append(ObservationSequence(uid, f"u{uid}", period, tuple(obs)))
    return Dataset(schema, tuple(seqs))


def random_instance(rng, max_k=3, max_t=6, max_m=2):
    schema = random_schema(rng)
    K = int(rng.integers(1, max_k + 1))
    T = int(rng.integers(1, max_t + 1))
    M = int(rng.integers(1, max_m + 1))
    params = random_params(rng, K, schema)
    dataset = random_dataset(rng, schema, T, M)
    return params, dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)

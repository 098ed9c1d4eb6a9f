import numpy as np
import pytest

import oracles
from conftest import random_instance, random_params, random_schema
from contexthmm import (ContextObservation, Dataset, FeatureDef, FeatureSchema,
                        HyperparamsConfig, ModelParams, ObservationSequence,
                        TrainConfig)
from contexthmm.selection import (apply_k_rule, day_slots, perplexity,
                                  select_group, select_group_by_timeslot,
                                  select_k, windowed_perplexity)
from datagen import (distinct_state_params, planted_pair_dataset,
                     planted_schedule_dataset, state_schema)

FAST = TrainConfig(max_iters=15, restarts=2, seed=1)
HYPER = HyperparamsConfig()


def test_perplexity_perfect_prediction():
    schema = FeatureSchema((FeatureDef(1, "f", 1, ("v",)),))
    params = ModelParams(pi=[1.0], rho=[[1.0]], theta=[[1.0]], phi=[[1.0]],
                         value_counts=(1,))
    obs = tuple(ContextObservation(t * 3600, 1, ((1, 0),)) for t in range(6))
    ds = Dataset(schema, (ObservationSequence(1, "a", 3600, obs),))
    assert perplexity(params, ds, 3) == pytest.approx(1.0, abs=1e-12)


def test_perplexity_single_heldout_definition(rng):
    """One held-out slot with one feature: perplexity is 1/p."""
    schema = FeatureSchema((FeatureDef(1, "f", 2, ("x", "y")),))
    params = ModelParams(pi=[1.0], rho=[[1.0]], theta=[[1.0]],
                         phi=[[0.3, 0.7]], value_counts=(2,))
    obs = (ContextObservation(0, 1, ((1, 0),)), ContextObservation(3600, 1, ((1, 1),)))
    ds = Dataset(schema, (ObservationSequence(1, "a", 3600, obs),))
    # K=1: predictive prob of the held-out pair is theta*phi = 0.7.
    assert perplexity(params, ds, 1) == pytest.approx(1 / 0.7, rel=1e-12)


def test_perplexity_matches_enumeration(rng):
    for _ in range(30):
        params, ds = random_instance(rng, max_k=2, max_t=4, max_m=2)
        if ds.T < 2:
            continue
        split = int(rng.integers(1, ds.T))
        from contexthmm.hmm import DatasetIndex
        count = int(DatasetIndex.build(ds).presence[split:].sum())
        if count == 0:
            continue
        got = perplexity(params, ds, split)
        p = oracles.conditional_tail(params, ds, split)
        assert got == pytest.approx(p ** (-1.0 / count), rel=1e-9)


def test_perplexity_state_relabel_invariant(rng):
    params, ds = random_instance(rng, max_k=3, max_t=5)
    while ds.T < 2:
        params, ds = random_instance(rng, max_k=3, max_t=5)
    perm = np.array(list(reversed(range(params.K))))
    relabeled = ModelParams(pi=params.pi[perm], rho=params.rho[np.ix_(perm, perm)],
                            theta=params.theta[perm], phi=params.phi[perm],
                            value_counts=params.value_counts)
    split = max(1, ds.T // 2)
    from contexthmm.hmm import DatasetIndex
    if DatasetIndex.build(ds).presence[split:].sum() == 0:
        pytest.skip("no held-out instances in this draw")
    assert perplexity(params, ds, split) == pytest.approx(
        perplexity(relabeled, ds, split), rel=1e-9)


def test_apply_k_rule_examples():
    assert apply_k_rule([2, 3, 4, 5], [100.0, 50.0, 48.0, 47.0], 0.10) == 3
    assert apply_k_rule([1, 2], [10.0, 9.95], 0.10) == 1
    assert apply_k_rule([1, 2, 3], [100.0, 80.0, 60.0], 0.10) == 3
    assert apply_k_rule([4], [5.0], 0.10) == 4


def test_generating_model_beats_shuffled(rng):
    wins = 0
    for seed in range(10):
        local = np.random.default_rng(seed)
        schema = state_schema(3)
        gen = distinct_state_params(local, 3, schema)
        from contexthmm import sample
        ds = sample(gen, schema, T=120, M=1, seed=seed)
        shuffled = ModelParams(pi=gen.pi, rho=gen.rho,
                               theta=gen.theta,
                               phi=gen.phi[list(reversed(range(3)))],
                               value_counts=gen.value_counts)
        if perplexity(gen, ds, 60) <= perplexity(shuffled, ds, 60):
            wins += 1
    assert wins >= 8


WEAK = HyperparamsConfig(eta_total=1.0, omega_total=2.0, delta_low=1.0,
                         delta_high=1.0, lam_value=0.05)


def test_select_k_recovers_planted_state_count():
    """Perplexity keeps dropping until the true K, then flattens."""
    from datagen import sticky_identifiable_params
    from contexthmm import sample
    schema, gen = sticky_identifiable_params(6)
    ds = sample(gen, schema, T=24 * 60, M=1, seed=5)
    K, reports = select_k(ds, range(2, 11, 2), WEAK,
                          TrainConfig(max_iters=40, restarts=8, seed=1))
    perps = [r.mean_perplexity for r in reports]
    assert all(b < a * 1.02 for a, b in zip(perps, perps[1:]))
    assert 4 <= K <= 8


def test_windowed_report_shape():
    ds, schema = planted_pair_dataset(T=24 * 6)
    rng = np.random.default_rng(0)
    params = distinct_state_params(rng, 4, schema)
    params = ModelParams(pi=params.pi, rho=params.rho, theta=params.theta,
                         phi=params.phi, value_counts=params.value_counts,
                         user_labels=("a", "b", "c"))
    rep = windowed_perplexity(params, ds)
    assert rep.K == 4 and rep.group == ("a", "b", "c")
    assert len(rep.per_window) == 6
    assert rep.mean_perplexity == pytest.approx(
        np.mean([p for _, p in rep.per_window]))
    assert all(p >= 1.0 for _, p in rep.per_window)


def test_select_group_m2_returns_single_group():
    ds, _ = planted_pair_dataset(T=24 * 6)
    ds = ds.restrict(["a", "b"])
    group, K, reports = select_group(ds, 2, (2, 3), HYPER, FAST)
    assert group == ("a", "b")
    assert {r.group for r in reports} == {("a", "b")}


def test_select_group_finds_planted_pair():
    ds, _ = planted_pair_dataset(T=24 * 10, seed=3)
    group, K, reports = select_group(ds, 2, (3, 5), HYPER, FAST, primary_user="a")
    assert group == ("a", "b")
    assert {r.group for r in reports} == {("a", "b"), ("a", "c")}


def test_select_group_slots_identical_users():
    ds, schema = planted_pair_dataset(T=24 * 8, seed=1)
    ds = Dataset(schema, (ds.sequences[0], ds.sequences[1]))
    slots = day_slots(6)
    out = select_group_by_timeslot(ds, 2, slots, (2, 3), HYPER, FAST)
    assert set(out.values()) == {("a", "b")}


def test_select_group_slots_recover_schedule():
    ds, _ = planted_schedule_dataset(T=24 * 21, seed=2)
    slots = [(0, 8), (8, 16), (16, 24)]
    out = select_group_by_timeslot(ds, 2, slots, (3, 5), HYPER, FAST,
                                   primary_user="a")
    assert out[(0, 8)] == ("a", "b")
    assert out[(8, 16)] == ("a", "c")

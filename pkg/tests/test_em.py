import numpy as np
import pytest

from conftest import random_dataset, random_instance, random_params, random_schema
from contexthmm import (Dataset, FeatureDef, FeatureSchema, Hyperparams,
                        HyperparamsConfig, ModelParams, TrainConfig, em_train,
                        fb_pass, feature_availability, load_model, m_step,
                        sample, save_model)
from contexthmm.params import value_offsets


def uniform_hyper(K, value_counts, delta=None):
    F = len(value_counts)
    W = sum(value_counts)
    if delta is None:
        delta = np.full((K, F), 10.0)
    return Hyperparams(eta=np.full(K, 1.0 / K), omega=np.full((K, K), 50.0 / K),
                       delta=delta, lam=np.full((K, W), 0.01),
                       value_counts=tuple(value_counts))


def hand_m_step(gamma, xi, dataset, hyper):
    """Loop-based reimplementation of the update equations."""
    K = gamma.shape[0]
    M, T = dataset.M, dataset.T
    F = dataset.schema.F
    offs = value_offsets(dataset.schema.value_counts)

    pi = np.array([gamma[k, 0] + hyper.eta[k] for k in range(K)])
    pi /= pi.sum()

    rho = np.zeros((K, K))
    for k in range(K):
        for j in range(K):
            rho[k, j] = sum(xi[k, j, t - 1] for t in range(1, T)) + hyper.omega[k, j]
        rho[k] /= rho[k].sum()

    theta = np.zeros((K, F))
    for k in range(K):
        for f in range(1, F + 1):
            num = sum(gamma[k, t] * sum(1 for seq in dataset.sequences
                                        if seq.observations[t].value_of(f) is not None)
                      for t in range(T)) + hyper.delta[k, f - 1]
            den = M * gamma[k].sum() + hyper.delta[k].sum()
            theta[k, f - 1] = num / den

    phi = np.zeros((K, offs[-1]))
    for k in range(K):
        for f in range(1, F + 1):
            den = hyper.lam[k, offs[f - 1]:offs[f]].sum()
            for seq in dataset.sequences:
                for t in range(T):
                    if seq.observations[t].value_of(f) is not None:
                        den += gamma[k, t]
            for v in range(dataset.schema.feature(f).cardinality):
                num = hyper.lam[k, offs[f - 1] + v]
                for seq in dataset.sequences:
                    for t in range(T):
                        if seq.observations[t].value_of(f) == v:
                            num += gamma[k, t]
                phi[k, offs[f - 1] + v] = num / den
    return pi, rho, theta, phi


def test_m_step_matches_hand_count(rng):
    for _ in range(15):
        params, ds = random_instance(rng, max_k=3, max_t=5, max_m=2)
        cache = fb_pass(params, ds)
        hyper = uniform_hyper(params.K, ds.schema.value_counts)
        got = m_step(cache.gamma, cache.xi, ds, hyper)
        pi, rho, theta, phi = hand_m_step(cache.gamma, cache.xi, ds, hyper)
        assert np.allclose(got.pi, pi, atol=1e-12)
        assert np.allclose(got.rho, rho, atol=1e-12)
        assert np.allclose(got.theta, theta, atol=1e-12)
        assert np.allclose(got.phi, phi, atol=1e-12)


def test_m_step_t1_transition_is_pure_prior(rng):
    params, ds = random_instance(rng, max_k=3, max_t=1, max_m=1)
    ds = ds.window(0, 1)
    cache = fb_pass(params, ds)
    omega = rng.uniform(0.5, 5.0, size=(params.K, params.K))
    hyper = uniform_hyper(params.K, ds.schema.value_counts)
    hyper = Hyperparams(eta=hyper.eta, omega=omega, delta=hyper.delta,
                        lam=hyper.lam, value_counts=hyper.value_counts)
    got = m_step(cache.gamma, cache.xi, ds, hyper)
    assert np.allclose(got.rho, omega / omega.sum(axis=1, keepdims=True))


def test_theta_closed_form_always_present():
    """K=1, M=1, feature present at every t: theta = (T+d)/(T+sum d)."""
    schema = FeatureSchema((FeatureDef(1, "a", 2, ("x", "y")),
                            FeatureDef(2, "b", 2, ("p", "q"))))
    params = ModelParams(pi=[1.0], rho=[[1.0]], theta=[[0.5, 0.5]],
                         phi=[[0.5, 0.5, 0.5, 0.5]], value_counts=(2, 2))
    from contexthmm import ContextObservation, ObservationSequence
    obs = tuple(ContextObservation(t * 3600, 1, ((1, 0),)) for t in range(3))
    ds = Dataset(schema, (ObservationSequence(1, "a", 3600, obs),))
    cache = fb_pass(params, ds)
    delta = np.array([[2.0, 7.0]])
    hyper = uniform_hyper(1, (2, 2), delta=delta)
    got = m_step(cache.gamma, cache.xi, ds, hyper)
    assert got.theta[0, 0] == pytest.approx((3 + 2.0) / (3 + 9.0), abs=1e-12)
    assert got.theta[0, 1] == pytest.approx(7.0 / (3 + 9.0), abs=1e-12)


def test_paper_default_hyperparameters_accepted(rng):
    schema = random_schema(rng)
    ds = random_dataset(rng, schema, T=12, M=2)
    cfg = HyperparamsConfig()
    hyper = cfg.materialize(4, schema.value_counts, feature_availability(ds))
    assert np.allclose(hyper.eta, 0.25)
    assert np.allclose(hyper.omega, 12.5)
    assert set(np.unique(hyper.delta)) <= {1.0, 10.0}
    assert np.allclose(hyper.lam, 0.01)
    params, trace = em_train(ds, 4, hyper, TrainConfig(max_iters=5, restarts=1))
    params.validate()


def ascent_ok(trace, slack=1e-8):
    return all(b - a >= -slack * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def test_em_ascent_and_convergence(rng):
    schema = random_schema(rng)
    gen = random_params(rng, 2, schema)
    ds = sample(gen, schema, T=120, M=2, seed=7)
    hyper = uniform_hyper(2, schema.value_counts)
    params, trace = em_train(ds, 2, hyper, TrainConfig(max_iters=30, restarts=2, seed=3))
    assert ascent_ok(trace)
    assert len(trace) <= 30


def weak_hyper(K, value_counts):
    """Near-ML priors so recovery tests are not dominated by smoothing."""
    F = len(value_counts)
    return Hyperparams(eta=np.full(K, 0.1), omega=np.full((K, K), 0.1),
                       delta=np.full((K, F), 0.1),
                       lam=np.full((K, sum(value_counts)), 0.01),
                       value_counts=tuple(value_counts))


def test_em_recovers_generating_model_loglik(rng):
    schema = random_schema(rng)
    gen = random_params(rng, 2, schema)
    ds = sample(gen, schema, T=300, M=1, seed=11)
    hyper = weak_hyper(2, schema.value_counts)
    params, trace = em_train(ds, 2, hyper,
                             TrainConfig(max_iters=100, loglik_rel_tol=1e-9,
                                         seed=5, restarts=6))
    gen_ll = fb_pass(gen, ds).loglik
    assert trace[-1] >= gen_ll - 1e-6


def test_hpcontext_restriction_is_bitwise_identical(rng):
    """Training on a restricted dataset equals the M=1 path exactly."""
    schema = random_schema(rng)
    gen = random_params(rng, 2, schema)
    ds = sample(gen, schema, T=60, M=3, seed=2)
    solo = ds.restrict([ds.user_labels[1]])
    hyper = uniform_hyper(2, schema.value_counts)
    cfg = TrainConfig(max_iters=10, seed=9, restarts=2)
    p1, t1 = em_train(solo, 2, hyper, cfg)
    rebuilt = Dataset(ds.schema, (solo.sequences[0],))
    p2, t2 = em_train(rebuilt, 2, hyper, cfg)
    assert t1 == t2
    assert np.array_equal(p1.pi, p2.pi) and np.array_equal(p1.rho, p2.rho)
    assert np.array_equal(p1.theta, p2.theta) and np.array_equal(p1.phi, p2.phi)


def test_sampler_deterministic_and_forced(rng):
    schema = FeatureSchema((FeatureDef(1, "f", 1, ("only",)),))
    params = ModelParams(pi=[1.0], rho=[[1.0]], theta=[[1.0]], phi=[[1.0]],
                         value_counts=(1,))
    ds = sample(params, schema, T=10, M=2, seed=1)
    for seq in ds.sequences:
        assert all(o.pairs == ((1, 0),) for o in seq.observations)
    again = sample(params, schema, T=10, M=2, seed=1)
    assert again == ds


def test_sampler_absorbing_chain(rng):
    schema = random_schema(rng)
    params = random_params(rng, 3, schema)
    params = ModelParams(pi=[1.0, 0.0, 0.0], rho=np.eye(3), theta=params.theta,
                         phi=params.phi, value_counts=params.value_counts)
    ds = sample(params, schema, T=50, M=1, seed=4)
    # State 0 generates everything: its per-feature value distribution rules.
    cache = fb_pass(params, ds)
    assert np.allclose(cache.gamma[0], 1.0)


def test_sampler_transition_frequencies(rng):
    # One-hot emissions make the state path directly readable from values.
    schema = FeatureSchema((FeatureDef(1, "f", 2, ("a", "b")),))
    rho = np.array([[0.8, 0.2], [0.35, 0.65]])
    params = ModelParams(pi=[0.5, 0.5], rho=rho,
                         theta=np.full((2, 1), 1.0),
                         phi=np.array([[1.0, 0.0], [0.0, 1.0]]),
                         value_counts=(2,))
    ds = sample(params, schema, T=50000, M=1, seed=123)
    states = [o.pairs[0][1] for o in ds.sequences[0].observations]
    emp = np.zeros((2, 2))
    for a, b in zip(states[:-1], states[1:]):
        emp[a, b] += 1
    emp /= emp.sum(axis=1, keepdims=True)
    assert np.max(np.abs(emp - rho)) < 0.01


def test_model_file_roundtrip(tmp_path, rng):
    schema = random_schema(rng)
    params = random_params(rng, 3, schema, labels=("a", "b"))
    path = tmp_path / "model.txt"
    save_model(params, path)
    back = load_model(path)
    assert np.array_equal(back.pi, params.pi)
    assert np.array_equal(back.rho, params.rho)
    assert np.array_equal(back.theta, params.theta)
    assert np.array_equal(back.phi, params.phi)
    assert back.value_counts == params.value_counts
    assert back.user_labels == ("a", "b")


def test_kernel_backends_agree(rng):
    from contexthmm.kernels import available_backends
    from contexthmm.hmm import log_mu_matrix
    backends = available_backends()
    if len(backends) < 2:
        pytest.skip("compiled backend not built")
    params, ds = random_instance(rng, max_k=3, max_t=6, max_m=2)
    log_mu = log_mu_matrix(params, ds)
    pi = np.ascontiguousarray(params.pi)
    rho = np.ascontiguousarray(params.rho)
    results = {}
    for name, mod in backends.items():
        alpha, log_c, bad = mod.forward(log_mu, pi, rho)
        assert bad == -1
        beta = mod.backward(log_mu, rho, log_c)
        gamma, xi = mod.posteriors(log_mu, rho, alpha, beta, log_c)
        results[name] = (alpha, log_c, beta, gamma, xi)
    a, b = results["python"], results["cython"]
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-12)

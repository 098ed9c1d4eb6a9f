"""Collaborative-filtering HMM: likelihood, scaled forward-backward, EM.

One latent chain spans all users of a dataset; each user's feature-value
pairs are independent emissions of the shared state.  The single-user
personalized model is the M=1 configuration of the same code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateError
from .params import (FBCache, Hyperparams, ModelParams, THETA_FLOOR,
                     TrainConfig, value_offsets)
from .schema import ContextObservation, Dataset, FeatureSchema, ObservationSequence

__all__ = ["observation_likelihood", "log_mu_matrix", "forward", "backward",
           "posteriors", "fb_pass", "m_step", "em_train", "sample",
           "feature_availability", "DatasetIndex"]


@dataclass(frozen=True)
class DatasetIndex:
    """Flattened (slot, feature, value) triples of every pair in a dataset.

    ``t_idx``/``f_idx`` are 0-based slot and feature indices, ``w_idx`` the
    flattened value index, one entry per observed pair over all users.
    """

    t_idx: np.ndarray
    f_idx: np.ndarray
    w_idx: np.ndarray
    presence: np.ndarray   # (T, F) number of users observing feature f at t
    T: int
    M: int

    @classmethod
    def build(cls, dataset: Dataset) -> "DatasetIndex":
        offs = value_offsets(dataset.schema.value_counts)
        t_list, f_list, w_list = [], [], []
        presence = np.zeros((dataset.T, dataset.schema.F), dtype=np.int64)
        for seq in dataset.sequences:
            for t, obs in enumerate(seq.observations):
                for f, v in obs.pairs:
                    t_list.append(t)
                    f_list.append(f - 1)
                    w_list.append(offs[f - 1] + v)
                    presence[t, f - 1] += 1
        return cls(np.array(t_list, dtype=np.int64),
                   np.array(f_list, dtype=np.int64),
                   np.array(w_list, dtype=np.int64),
                   presence, dataset.T, dataset.M)


def _index(dataset) -> DatasetIndex:
    return dataset if isinstance(dataset, DatasetIndex) else DatasetIndex.build(dataset)


def feature_availability(dataset: Dataset) -> np.ndarray:
    """Fraction of (user, slot) cells in which each feature is present."""
    idx = DatasetIndex.build(dataset)
    return idx.presence.sum(axis=0) / float(idx.T * idx.M)


def observation_likelihood(params: ModelParams, obs_at_t, k: int) -> float:
    """log mu_tk: joint log-probability of all users' pairs under state k.

    Empty observations contribute zero; absent features carry no factor.
    """
    if isinstance(obs_at_t, ContextObservation):
        obs_at_t = [obs_at_t]
    offs = params.offsets
    total = 0.0
    for obs in obs_at_t:
        for f, v in obs.pairs:
            total += np.log(params.theta[k, f - 1]) + np.log(params.phi[k, offs[f - 1] + v])
    return total


def log_mu_matrix(params: ModelParams, dataset) -> np.ndarray:
    """(K, T) matrix of log mu_tk over the whole dataset."""
    idx = _index(dataset)
    with np.errstate(divide="ignore"):
        log_theta = np.log(params.theta)
        log_phi = np.log(params.phi)
    log_mu = np.zeros((params.K, idx.T))
    if idx.t_idx.size:
        contrib = log_theta[:, idx.f_idx] + log_phi[:, idx.w_idx]  # (K, P)
        np.add.at(log_mu.T, idx.t_idx, contrib.T)
    return log_mu


def _forward_raw(params, log_mu):
    pi = np.ascontiguousarray(params.pi)
    rho = np.ascontiguousarray(params.rho)
    alpha_hat, log_c, bad_t = kernels.forward(log_mu, pi, rho)
    if bad_t >= 0:
        raise DegenerateError(
            f"observation at t={bad_t} has zero probability under every state")
    return alpha_hat, log_c


def forward(params: ModelParams, dataset):
    """Scaled forward pass: (alpha_hat, scale, loglik).

    ``scale[t]`` is the reciprocal normalizer of step t, so
    ``loglik == -sum(log(scale))``.
    """
    log_mu = log_mu_matrix(params, dataset)
    alpha_hat, log_c = _forward_raw(params, log_mu)
    return alpha_hat, np.exp(-log_c), float(log_c.sum())


def backward(params: ModelParams, dataset, scale) -> np.ndarray:
    """Scaled backward pass reusing the forward normalizers."""
    log_mu = log_mu_matrix(params, dataset)
    log_c = -np.log(np.asarray(scale, dtype=float))
    return kernels.backward(log_mu, np.ascontiguousarray(params.rho),
                            np.ascontiguousarray(log_c))


def posteriors(params: ModelParams, dataset, alpha_hat, beta_hat, scale):
    """(gamma, xi) posteriors from the scaled forward/backward caches."""
    log_mu = log_mu_matrix(params, dataset)
    log_c = -np.log(np.asarray(scale, dtype=float))
    return kernels.posteriors(log_mu, np.ascontiguousarray(params.rho),
                              np.ascontiguousarray(alpha_hat),
                              np.ascontiguousarray(beta_hat),
                              np.ascontiguousarray(log_c))


def fb_pass(params: ModelParams, dataset) -> FBCache:
    """Full E-step: forward, backward, and posteriors in one cache."""
    log_mu = log_mu_matrix(params, dataset)
    rho = np.ascontiguousarray(params.rho)
    alpha_hat, log_c = _forward_raw(params, log_mu)
    beta_hat = kernels.backward(log_mu, rho, log_c)
    gamma, xi = kernels.posteriors(log_mu, rho, alpha_hat, beta_hat, log_c)
    return FBCache(alpha_hat=alpha_hat, beta_hat=beta_hat,
                   scale=np.exp(-log_c), gamma=gamma, xi=xi,
                   loglik=float(log_c.sum()), log_c=log_c)


def m_step(gamma, xi, dataset, hyper: Hyperparams) -> ModelParams:
    """Smoothed parameter updates from the current posteriors."""
    idx = _index(dataset)
    K = gamma.shape[0]
    W = hyper.lam.shape[1]
    F = hyper.delta.shape[1]

    pi_num = gamma[:, 0] + hyper.eta
    pi = pi_num / pi_num.sum()

    rho_num = (xi.sum(axis=2) if xi.size else np.zeros((K, K))) + hyper.omega
    rho = rho_num / rho_num.sum(axis=1, keepdims=True)

    theta_num = gamma @ idx.presence.astype(float) + hyper.delta
    theta_den = idx.M * gamma.sum(axis=1, keepdims=True) + hyper.delta.sum(axis=1, keepdims=True)
    theta = np.clip(theta_num / theta_den, THETA_FLOOR, 1.0)

    phi_num = np.zeros((K, W))
    feat_den = np.zeros((K, F))
    if idx.t_idx.size:
        vals = gamma[:, idx.t_idx].T  # (P, K)
        np.add.at(phi_num.T, idx.w_idx, vals)
        np.add.at(feat_den.T, idx.f_idx, vals)
    phi_num += hyper.lam
    offs = value_offsets(hyper.value_counts)
    lam_tot = np.add.reduceat(hyper.lam, offs[:-1], axis=1)
    phi_den = feat_den + lam_tot
    phi = np.empty_like(phi_num)
    for f in range(F):
        phi[:, offs[f]:offs[f + 1]] = (phi_num[:, offs[f]:offs[f + 1]]
                                       / phi_den[:, [f]])
    return ModelParams(pi=pi, rho=rho, theta=theta, phi=phi,
                       value_counts=hyper.value_counts,
                       user_labels=tuple(dataset.user_labels)
                       if isinstance(dataset, Dataset) else ())


def _floor_dist(p, floor=1e-10):
    """Keep sampled probability vectors away from exact zero."""
    p = np.clip(p, floor, None)
    return p / p.sum(axis=-1, keepdims=True)


def _init_params(hyper: Hyperparams, cfg: TrainConfig, rng, user_labels) -> ModelParams:
    K = hyper.K
    offs = value_offsets(hyper.value_counts)
    delta_tot = hyper.delta.sum(axis=1, keepdims=True)
    if cfg.init == "from-priors":
        pi = hyper.eta / hyper.eta.sum()
        rho = hyper.omega / hyper.omega.sum(axis=1, keepdims=True)
        theta = hyper.delta / delta_tot
        phi = np.empty_like(hyper.lam)
        for f in range(len(hyper.value_counts)):
            block = hyper.lam[:, offs[f]:offs[f + 1]]
            phi[:, offs[f]:offs[f + 1]] = block / block.sum(axis=1, keepdims=True)
    else:
        pi = _floor_dist(rng.dirichlet(hyper.eta))
        rho = _floor_dist(np.vstack([rng.dirichlet(hyper.omega[k]) for k in range(K)]))
        b = np.maximum(delta_tot - hyper.delta, 1e-12)
        theta = rng.beta(hyper.delta, b)
        phi = np.empty_like(hyper.lam)
        for f in range(len(hyper.value_counts)):
            for k in range(K):
                phi[k, offs[f]:offs[f + 1]] = _floor_dist(
                    rng.dirichlet(hyper.lam[k, offs[f]:offs[f + 1]]))
    theta = np.clip(theta, THETA_FLOOR, 1.0)
    return ModelParams(pi=pi, rho=rho, theta=theta, phi=phi,
                       value_counts=hyper.value_counts, user_labels=tuple(user_labels))


def em_train(dataset: Dataset, K: int, hyper: Hyperparams, cfg: TrainConfig):
    """EM training with restarts; returns the best run's params and trace.

    Iterates E and M steps until the relative log-likelihood change drops
    below the configured tolerance or ``max_iters`` is reached.  Runs
    ``cfg.restarts`` seeded restarts and keeps the highest final
    log-likelihood.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if hyper.K != K:
        raise ValueError(f"hyperparameters are for K={hyper.K}, not {K}")
    idx = DatasetIndex.build(dataset)
    labels = dataset.user_labels
    best = None
    for restart in range(max(cfg.restarts, 1)):
        rng = np.random.default_rng((cfg.seed, restart))
        params = _init_params(hyper, cfg, rng, labels)
        trace = []
        prev = None
        for _ in range(cfg.max_iters):
            cache = fb_pass(params, idx)
            params = m_step(cache.gamma, cache.xi, idx, hyper)
            trace.append(cache.loglik)
            if prev is not None and abs(cache.loglik - prev) <= cfg.loglik_rel_tol * abs(prev):
                break
            prev = cache.loglik
        params = ModelParams(pi=params.pi, rho=params.rho, theta=params.theta,
                             phi=params.phi, value_counts=params.value_counts,
                             user_labels=tuple(labels))
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace)
    return best


def sample(params: ModelParams, schema: FeatureSchema, T: int, M: int, seed,
           start_ts: int = 1294012800, period_seconds: int = 3600,
           user_labels=None) -> Dataset:
    """Draw a dataset from the generative model.

    States follow the chain; per user and feature, the feature is present
    with its availability probability and its value is drawn from the
    state's value distribution.  Deterministic for a given seed.
    """
    params.check_schema(schema)
    rng = np.random.default_rng(seed)
    offs = params.offsets
    if user_labels is None:
        user_labels = [f"u{u}" for u in range(1, M + 1)]
    states = np.empty(T, dtype=np.int64)
    states[0] = rng.choice(params.K, p=params.pi)
    for t in range(1, T):
        states[t] = rng.choice(params.K, p=params.rho[states[t - 1]])
    seqs = []
    for uid in range(1, M + 1):
        obs = []
        for t in range(T):
            k = states[t]
            pairs = []
            for f in range(1, schema.F + 1):
                if rng.random() < params.theta[k, f - 1]:
                    block = params.phi[k, offs[f - 1]:offs[f]]
                    v = rng.choice(block.shape[0], p=block)
                    pairs.append((f, int(v)))
            obs.append(ContextObservation(start_ts + t * period_seconds, uid, tuple(pairs)))
        seqs.append(ObservationSequence(uid, user_labels[uid - 1], period_seconds, tuple(obs)))
    return Dataset(schema, tuple(seqs))

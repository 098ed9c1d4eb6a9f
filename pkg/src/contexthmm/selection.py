"""Perplexity evaluation, hidden-state-count and user-group selection.

Perplexity follows the held-out predictive definition: the exponentiated
negative predictive log-probability per observed feature instance.  Windowed
evaluation predicts a horizon of slots from a same-length preceding window,
one window per stride, and averages the per-window perplexities.
"""

from __future__ import annotations

import datetime as _dt
import itertools
from dataclasses import dataclass

import numpy as np

from .hmm import (DatasetIndex, _forward_raw, em_train, feature_availability,
                  log_mu_matrix)
from .kernels import backward as _backward_kernel
from .params import HyperparamsConfig, ModelParams, TrainConfig
from .schema import Dataset

__all__ = ["PerplexityReport", "perplexity", "windowed_perplexity",
           "apply_k_rule", "select_k", "select_group",
           "select_group_by_timeslot", "day_slots"]

DEFAULT_WINDOW = 12
DEFAULT_HORIZON = 12


@dataclass(frozen=True)
class PerplexityReport:
    """Mean and per-window perplexity of one (group, K) model."""

    K: int
    group: tuple[str, ...]
    mean_perplexity: float
    per_window: tuple[tuple[int, float], ...]   # (window start timestamp, perplexity)


def perplexity(params: ModelParams, dataset: Dataset, split_t: int) -> float:
    """Perplexity of o_{t+1:T} given o_{1:t} with prefix length split_t."""
    if not 1 <= split_t < dataset.T:
        raise ValueError(f"split_t must be in [1, {dataset.T})")
    log_mu = log_mu_matrix(params, dataset)
    rho = np.ascontiguousarray(params.rho)
    alpha_hat, log_c = _forward_raw(params, log_mu)
    beta_hat = _backward_kernel(log_mu, rho, log_c)
    # p(o_{t+1:T} | o_{1:t}) = sum_k alpha'(c_tk) beta(c_tk); under the shared
    # scaling the column product sums to one and the tail normalizers carry
    # the conditional probability.
    col = float(np.dot(alpha_hat[:, split_t - 1], beta_hat[:, split_t - 1]))
    log_pred = np.log(col) + float(log_c[split_t:].sum())
    idx = DatasetIndex.build(dataset)
    count = int(np.sum(idx.presence[split_t:]))
    if count == 0:
        raise ValueError("no observed feature instances in the evaluation span")
    return float(np.exp(-log_pred / count))


def _window_starts(T: int, window: int, horizon: int, stride: int):
    return range(0, T - window - horizon + 1, stride)


def _window_scores(params, dataset, window, horizon, stride):
    """Per-window, per-eval-step negative log predictive and instance counts.

    Every window is treated as a fresh sequence: filtering restarts from the
    initial state distribution at the window head.
    """
    idx = DatasetIndex.build(dataset)
    timestamps = dataset.timestamps
    scores = []
    for start in _window_starts(dataset.T, window, horizon, stride):
        sub = dataset.window(start, start + window + horizon)
        log_mu = log_mu_matrix(params, sub)
        _, log_c = _forward_raw(params, log_mu)
        step_nll = -log_c[window:]
        counts = idx.presence[start + window:start + window + horizon].sum(axis=1)
        hours = [_dt.datetime.fromtimestamp(timestamps[start + window + i],
                                            tz=_dt.timezone.utc).hour
                 for i in range(horizon)]
        scores.append((timestamps[start], step_nll, counts, hours))
    return scores


def _perp(nll_sum, count_sum) -> float:
    return float(np.exp(nll_sum / count_sum))


def windowed_perplexity(params: ModelParams, dataset: Dataset,
                        window: int = DEFAULT_WINDOW, horizon: int = DEFAULT_HORIZON,
                        stride: int | None = None) -> PerplexityReport:
    """Average horizon-ahead perplexity over strided windows."""
    stride = stride or (window + horizon)
    per_window = []
    for start_ts, step_nll, counts, _ in _window_scores(params, dataset, window,
                                                        horizon, stride):
        total = counts.sum()
        if total == 0:
            continue
        per_window.append((start_ts, _perp(step_nll.sum(), total)))
    if not per_window:
        raise ValueError("no evaluable windows (dataset too short or empty)")
    mean = float(np.mean([p for _, p in per_window]))
    return PerplexityReport(K=params.K, group=tuple(params.user_labels),
                            mean_perplexity=mean, per_window=tuple(per_window))


def apply_k_rule(ks, perps, drop_threshold: float):
    """First K whose successor improves by less than the threshold.

    Scanning upward, stop as soon as the relative decrease falls below the
    threshold and keep the previous K; if it never does, keep the largest.
    """
    for i in range(1, len(ks)):
        decrease = (perps[i - 1] - perps[i]) / perps[i - 1]
        if decrease < drop_threshold:
            return ks[i - 1]
    return ks[-1]


def _train_split(T: int, train_fraction: float, block: int) -> int:
    cut = int(round(T * train_fraction))
    cut -= cut % block
    return min(max(cut, block), T - block)


def select_k(dataset: Dataset, k_range, hyper: HyperparamsConfig, cfg: TrainConfig,
             drop_threshold: float = 0.10, train_fraction: float = 2 / 3,
             window: int = DEFAULT_WINDOW, horizon: int = DEFAULT_HORIZON):
    """Pick the state count by the rate-of-decrease-in-perplexity rule.

    Trains on the leading fraction of the data, evaluates windowed perplexity
    on the rest, and stops increasing K once the relative improvement drops
    below the threshold.  Returns the chosen K and the evaluated reports.
    """
    ks = sorted(k_range)
    if len(ks) == 2 and ks[1] - ks[0] > 1:
        ks = list(range(ks[0], ks[1] + 1))   # (K_min, K_max) shorthand
    if ks[0] < 1:
        raise ValueError("K must be >= 1")
    cut = _train_split(dataset.T, train_fraction, window + horizon)
    train = dataset.window(0, cut)
    test = dataset.window(cut, dataset.T)
    avail = feature_availability(train)
    reports: list[PerplexityReport] = []
    seen, perps = [], []
    chosen = None
    for K in ks:
        hp = hyper.materialize(K, dataset.schema.value_counts, avail)
        params, _ = em_train(train, K, hp, cfg)
        report = windowed_perplexity(params, test, window, horizon)
        reports.append(report)
        seen.append(K)
        perps.append(report.mean_perplexity)
        if len(perps) >= 2:
            decrease = (perps[-2] - perps[-1]) / perps[-2]
            if decrease < drop_threshold:
                chosen = seen[-2]
                break
    if chosen is None:
        chosen = seen[-1]
    return chosen, reports


def _candidate_groups(labels, group_size, primary):
    if primary is not None and primary not in labels:
        raise ValueError(f"primary user {primary!r} not in dataset")
    for combo in itertools.combinations(sorted(labels), group_size):
        if primary is None or primary in combo:
            yield combo


def select_group(dataset: Dataset, group_size: int, k_range,
                 hyper: HyperparamsConfig, cfg: TrainConfig,
                 primary_user: str | None = "first",
                 drop_threshold: float = 0.10, train_fraction: float = 2 / 3,
                 window: int = DEFAULT_WINDOW, horizon: int = DEFAULT_HORIZON):
    """Exhaustive group search by minimum mean perplexity.

    Candidate groups contain the primary user (default: the first user;
    pass None to sweep every subset).  Ties break toward the
    lexicographically smallest group.
    """
    if not 2 <= group_size <= dataset.M:
        raise ValueError("group size must be in [2, M]")
    if primary_user == "first":
        primary_user = sorted(dataset.user_labels)[0]
    best = None
    all_reports: list[PerplexityReport] = []
    for group in _candidate_groups(dataset.user_labels, group_size, primary_user):
        sub = dataset.restrict(list(group))
        K, reports = select_k(sub, k_range, hyper, cfg, drop_threshold,
                              train_fraction, window, horizon)
        all_reports.extend(reports)
        mean = next(r.mean_perplexity for r in reports if r.K == K)
        key = (mean, group)
        if best is None or key < best[0]:
            best = (key, group, K)
    _, group, K = best
    return group, K, all_reports


def day_slots(width_hours: int = 3):
    """Half-open [start, end) hour bins partitioning the day."""
    if 24 % width_hours != 0:
        raise ValueError("slot width must divide 24")
    return [(h, h + width_hours) for h in range(0, 24, width_hours)]


def select_group_by_timeslot(dataset: Dataset, group_size: int, slots,
                             k_range, hyper: HyperparamsConfig, cfg: TrainConfig,
                             primary_user: str | None = "first",
                             drop_threshold: float = 0.10,
                             train_fraction: float = 2 / 3,
                             window: int = DEFAULT_WINDOW,
                             horizon: int = DEFAULT_HORIZON):
    """Per-time-of-day group choice by slot-restricted mean perplexity.

    Each group's model is trained once (at its globally selected K); the
    perplexity exponent is then restricted to evaluation steps whose target
    hour falls in the slot.
    """
    covered = sorted(h for lo, hi in slots for h in range(lo, hi))
    if covered != list(range(24)):
        raise ValueError("slots must partition the 24 hours of the day")
    if primary_user == "first":
        primary_user = sorted(dataset.user_labels)[0]
    cut = _train_split(dataset.T, train_fraction, window + horizon)
    train, test = dataset.window(0, cut), dataset.window(cut, dataset.T)
    avail = feature_availability(train)

    slot_means: dict[tuple[int, int], list[tuple[float, tuple[str, ...]]]] = {
        tuple(s): [] for s in slots}
    for group in _candidate_groups(dataset.user_labels, group_size, primary_user):
        sub_train = train.restrict(list(group))
        sub_test = test.restrict(list(group))
        K, _ = select_k(sub_train, k_range, hyper, cfg, drop_threshold,
                        train_fraction, window, horizon)
        hp = hyper.materialize(K, dataset.schema.value_counts,
                               feature_availability(sub_train))
        params, _ = em_train(sub_train, K, hp, cfg)
        # Slide by the horizon so evaluation spans tile every hour of the day.
        scores = _window_scores(params, sub_test, window, horizon, horizon)
        for lo, hi in slots:
            per_window = []
            for _, step_nll, counts, hours in scores:
                keep = [i for i, h in enumerate(hours) if lo <= h < hi]
                total = int(sum(counts[i] for i in keep))
                if total == 0:
                    continue
                per_window.append(_perp(sum(step_nll[i] for i in keep), total))
            if per_window:
                slot_means[(lo, hi)].append((float(np.mean(per_window)), group))
    out = {}
    for slot, entries in slot_means.items():
        if entries:
            out[slot] = min(entries)[1]
    return out

"""Filtered-state recursion, next-step forecasts, model averaging, grading."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .hmm import _forward_raw, log_mu_matrix
from .params import ModelParams, value_offsets
from .schema import ContextObservation, Dataset

__all__ = ["FeatureForecast", "PredictionGrade", "filter_posterior",
           "predict_next", "predict_horizon", "combine_models", "grade"]

EXCELLENT_MIN = 7
GOOD_MIN = 4


@dataclass(frozen=True)
class FeatureForecast:
    """Per-feature presence probabilities and value distributions at one step."""

    t_plus_1: int
    presence: np.ndarray        # (F,)
    values: np.ndarray          # (W,) flattened per-feature distributions
    value_counts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "presence", np.asarray(self.presence, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def offsets(self) -> np.ndarray:
        return value_offsets(self.value_counts)

    def value_distribution(self, feature_id: int) -> np.ndarray:
        offs = self.offsets
        return self.values[offs[feature_id - 1]:offs[feature_id]]

    def point_prediction(self, feature_id: int) -> tuple[int, float]:
        """Most probable value of a feature and its probability."""
        dist = self.value_distribution(feature_id)
        v = int(np.argmax(dist))
        return v, float(dist[v])

    def presence_of(self, feature_id: int) -> float:
        return float(self.presence[feature_id - 1])

    def will_be_observed(self, feature_id: int) -> bool:
        """Presence call: more probable present than absent."""
        return self.presence_of(feature_id) >= 0.5


@dataclass(frozen=True)
class PredictionGrade:
    """Correct-feature count bucketed into Excellent/Good/Bad/Empty."""

    correct_count: int
    grade: str

    @classmethod
    def from_count(cls, correct: int) -> "PredictionGrade":
        if correct >= EXCELLENT_MIN:
            label = "Excellent"
        elif correct >= GOOD_MIN:
            label = "Good"
        elif correct >= 1:
            label = "Bad"
        else:
            label = "Empty"
        return cls(correct, label)


def filter_posterior(params: ModelParams, obs_prefix: Dataset) -> np.ndarray:
    """Filtered state posterior p(c_t | o_1:t) after the whole prefix."""
    log_mu = log_mu_matrix(params, obs_prefix)
    alpha_hat, _ = _forward_raw(params, log_mu)
    return alpha_hat[:, -1]


def _state_predictive(params, obs_prefix, horizon):
    spred = filter_posterior(params, obs_prefix)
    for _ in range(horizon):
        spred = spred @ params.rho
    return spred


def _forecast_from_state(params, spred, when):
    presence = spred @ params.theta
    values = spred @ params.phi
    return FeatureForecast(t_plus_1=when, presence=presence, values=values,
                           value_counts=params.value_counts)


def predict_next(params: ModelParams, obs_prefix: Dataset) -> FeatureForecast:
    """One-step-ahead feature and value probabilities given the prefix."""
    params.check_schema(obs_prefix.schema)
    spred = _state_predictive(params, obs_prefix, 1)
    when = obs_prefix.timestamps[-1] + obs_prefix.period_seconds
    return _forecast_from_state(params, spred, when)


def predict_horizon(params: ModelParams, obs_prefix: Dataset, h: int) -> list[FeatureForecast]:
    """Forecasts 1..h steps ahead; the state predictive is propagated
    through the transition matrix only."""
    if h < 1:
        raise ValueError("horizon must be >= 1")
    params.check_schema(obs_prefix.schema)
    alpha = filter_posterior(params, obs_prefix)
    last = obs_prefix.timestamps[-1]
    period = obs_prefix.period_seconds
    out = []
    spred = alpha
    for step in range(1, h + 1):
        spred = spred @ params.rho
        out.append(_forecast_from_state(params, spred, last + step * period))
    return out


def combine_models(forecasts: list[FeatureForecast]) -> FeatureForecast:
    """Unweighted average of presence and value probabilities."""
    if not forecasts:
        raise ValueError("need at least one forecast")
    first = forecasts[0]
    for fc in forecasts[1:]:
        if fc.value_counts != first.value_counts:
            raise SchemaError("forecasts disagree on the feature vocabulary")
    presence = np.mean([fc.presence for fc in forecasts], axis=0)
    values = np.mean([fc.values for fc in forecasts], axis=0)
    return FeatureForecast(t_plus_1=first.t_plus_1, presence=presence,
                           values=values, value_counts=first.value_counts)


def grade(forecast: FeatureForecast, truth: ContextObservation) -> PredictionGrade:
    """Count features whose most probable value matches the truth.

    Only features present in the truth are scored; absent ones neither help
    nor hurt.
    """
    correct = 0
    for f, v in truth.pairs:
        pred_v, _ = forecast.point_prediction(f)
        if pred_v == v:
            correct += 1
    return PredictionGrade.from_count(correct)

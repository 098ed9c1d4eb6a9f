"""Model parameters, Dirichlet hyperparameters, and their flat-file format.

Value distributions are stored flattened: ``phi[k, offsets[f-1] + v]`` holds
the probability of value ``v`` of feature ``f`` under state ``k``, with
``offsets`` the cumulative sum of the per-feature vocabulary sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError, SchemaError

__all__ = ["Hyperparams", "HyperparamsConfig", "ModelParams", "TrainConfig",
           "FBCache", "save_model", "load_model"]

_ATOL = 1e-9
THETA_FLOOR = 1e-12


def value_offsets(value_counts) -> np.ndarray:
    """Start index of each feature's block in a flattened value array."""
    return np.concatenate([[0], np.cumsum(value_counts)])


@dataclass(frozen=True)
class Hyperparams:
    """Dirichlet priors for the initial, transition, and emission models."""

    eta: np.ndarray      # (K,)
    omega: np.ndarray    # (K, K)
    delta: np.ndarray    # (K, F)
    lam: np.ndarray      # (K, W) flattened per-feature value priors
    value_counts: tuple[int, ...]

    def __post_init__(self):
        for name in ("eta", "omega", "delta", "lam"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(arr > 0):
                raise ValueError(f"hyperparameter {name} must be strictly positive")
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.eta.shape[0]


@dataclass(frozen=True)
class HyperparamsConfig:
    """Recipe producing concrete priors for any K.

    Defaults follow the usual topic-model-style settings: eta=1/K,
    omega=50/K, per-feature delta in {low, high} keyed on how often the
    feature is available, and a small symmetric value prior.
    """

    eta_total: float = 1.0
    omega_total: float = 50.0
    delta_low: float = 1.0
    delta_high: float = 10.0
    availability_threshold: float = 0.5
    lam_value: float = 0.01

    def materialize(self, K: int, value_counts, availability=None) -> Hyperparams:
        """Build priors for K states.

        ``availability`` gives the empirical fraction of slots in which each
        feature is present; features above the threshold get the high delta.
        Without it every feature gets the high delta.
        """
        F = len(value_counts)
        if availability is None:
            delta_row = np.full(F, self.delta_high)
        else:
            availability = np.asarray(availability, dtype=float)
            delta_row = np.where(availability > self.availability_threshold,
                                 self.delta_high, self.delta_low)
        W = int(sum(value_counts))
        return Hyperparams(
            eta=np.full(K, self.eta_total / K),
            omega=np.full((K, K), self.omega_total / K),
            delta=np.tile(delta_row, (K, 1)),
            lam=np.full((K, W), self.lam_value),
            value_counts=tuple(value_counts),
        )


@dataclass(frozen=True)
class ModelParams:
    """Trained model: initial, transition, availability, value parameters."""

    pi: np.ndarray       # (K,)
    rho: np.ndarray      # (K, K) row-stochastic
    theta: np.ndarray    # (K, F) availability probabilities in (0, 1]
    phi: np.ndarray      # (K, W) flattened value distributions
    value_counts: tuple[int, ...]
    user_labels: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("pi", "rho", "theta", "phi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        self.validate()

    def validate(self):
        offs = self.offsets
        if abs(self.pi.sum() - 1.0) > _ATOL:
            raise ValueError("pi must sum to 1")
        if np.any(np.abs(self.rho.sum(axis=1) - 1.0) > _ATOL):
            raise ValueError("every rho row must sum to 1")
        if np.any(self.theta <= 0) or np.any(self.theta > 1 + _ATOL):
            raise ValueError("theta entries must lie in (0, 1]")
        for f in range(len(self.value_counts)):
            block = self.phi[:, offs[f]:offs[f + 1]]
            if np.any(np.abs(block.sum(axis=1) - 1.0) > _ATOL):
                raise ValueError(f"phi block for feature {f + 1} must sum to 1")

    @property
    def K(self) -> int:
        return self.pi.shape[0]

    @property
    def F(self) -> int:
        return len(self.value_counts)

    @property
    def offsets(self) -> np.ndarray:
        return value_offsets(self.value_counts)

    def phi_block(self, feature_id: int) -> np.ndarray:
        """(K, V_f) value distribution of one feature."""
        offs = self.offsets
        return self.phi[:, offs[feature_id - 1]:offs[feature_id]]

    def check_schema(self, schema) -> None:
        if tuple(schema.value_counts) != self.value_counts:
            raise SchemaError("model vocabulary does not match the schema")


@dataclass(frozen=True)
class TrainConfig:
    """EM driver settings."""

    max_iters: int = 50
    loglik_rel_tol: float = 1e-4
    seed: int = 0
    init: str = "random-dirichlet"  # or "from-priors"
    restarts: int = 4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.loglik_rel_tol <= 0:
            raise ValueError("loglik_rel_tol must be > 0")
        if self.init not in ("random-dirichlet", "from-priors"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class FBCache:
    """Scaled forward/backward quantities for one sequence.

    ``scale[t]`` is the reciprocal of the per-step normalizer, so the data
    log likelihood equals ``-sum(log(scale))``.  The filtered posterior
    (alpha-prime) is exactly a column of ``alpha_hat``.
    """

    alpha_hat: np.ndarray        # (K, T)
    beta_hat: np.ndarray         # (K, T)
    scale: np.ndarray            # (T,)
    gamma: np.ndarray            # (K, T)
    xi: np.ndarray               # (K, K, T-1), xi[j, k, t-1]
    loglik: float
    log_c: np.ndarray = field(default=None, repr=False)  # (T,) log normalizers


# ---------------------------------------------------------------------------
# Flat-file model format (versioned, decimal text, 17 significant digits)

_MAGIC = "contexthmm-model v1"


def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).ravel())


def save_model(params: ModelParams, path) -> None:
    offs = params.offsets
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MAGIC + "\n")
        fh.write(f"K {params.K}\n")
        fh.write(f"F {params.F}\n")
        fh.write("V " + " ".join(str(v) for v in params.value_counts) + "\n")
        fh.write("users " + ",".join(params.user_labels) + "\n")
        fh.write("pi " + _fmt(params.pi) + "\n")
        for k in range(params.K):
            fh.write("rho " + _fmt(params.rho[k]) + "\n")
        for k in range(params.K):
            fh.write("theta " + _fmt(params.theta[k]) + "\n")
        for k in range(params.K):
            for f in range(params.F):
                fh.write(f"phi {k + 1} {f + 1} "
                         + _fmt(params.phi[k, offs[f]:offs[f + 1]]) + "\n")


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != _MAGIC:
        raise ParseError(f"{path}: not a {_MAGIC} file")
    fields: dict[str, str] = {}
    rho_rows, theta_rows, phi_rows = [], [], []
    for ln in lines[1:]:
        if not ln:
            continue
        tag, _, rest = ln.partition(" ")
        if tag == "rho":
            rho_rows.append([float(x) for x in rest.split()])
        elif tag == "theta":
            theta_rows.append([float(x) for x in rest.split()])
        elif tag == "phi":
            phi_rows.append([float(x) for x in rest.split()[2:]])
        else:
            fields[tag] = rest
    try:
        K = int(fields["K"])
        F = int(fields["F"])
        value_counts = tuple(int(v) for v in fields["V"].split())
        pi = np.array([float(x) for x in fields["pi"].split()])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: malformed header: {exc}") from None
    if len(value_counts) != F or len(rho_rows) != K or len(phi_rows) != K * F:
        raise ParseError(f"{path}: inconsistent block counts")
    users = tuple(u for u in fields.get("users", "").split(",") if u)
    W = sum(value_counts)
    phi = np.zeros((K, W))
    offs = value_offsets(value_counts)
    for i, row in enumerate(phi_rows):
        k, f = divmod(i, F)
        if len(row) != value_counts[f]:
            raise ParseError(f"{path}: phi block {k + 1},{f + 1} has wrong length")
        phi[k, offs[f]:offs[f + 1]] = row
    return ModelParams(pi=pi, rho=np.array(rho_rows), theta=np.array(theta_rows),
                       phi=phi, value_counts=value_counts, user_labels=users)

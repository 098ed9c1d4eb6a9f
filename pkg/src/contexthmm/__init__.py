"""Personalized and collaborative HMM context models.

Learns hidden-Markov context models from timestamped feature-value logs,
predicts future context, selects state counts and user groups by perplexity,
and trains the multi-user model under a simulated privacy-preserving
protocol built on additively homomorphic encryption.
"""

from .errors import (AlignmentError, ContextHMMError, DegenerateError,
                     KeyMismatchError, ParseError, PeriodError, ProtocolError,
                     RangeError, SchemaError)
from .kernels import BACKEND as KERNEL_BACKEND
from .params import (FBCache, Hyperparams, HyperparamsConfig, ModelParams,
                     TrainConfig, load_model, save_model)
from .schema import (ContextObservation, Dataset, FeatureDef, FeatureSchema,
                     ObservationSequence, demo_schema, derive_time_features,
                     downsample, load_holidays, load_log, load_schema,
                     save_schema, write_log)
from .hmm import (backward, em_train, fb_pass, feature_availability, forward,
                  log_mu_matrix, m_step, observation_likelihood, posteriors,
                  sample)

__version__ = "0.1.0"

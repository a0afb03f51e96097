"""User-level private personalization through a shared low-rank representation."""

from ._backend import backend_name
from .dp import (
    NoiseMode,
    NoiseScale,
    PrivacySpec,
    calibrate_init_noise,
    calibrate_training_noise,
    clip_frobenius,
    exponential_mechanism,
    gaussian_noise_matrix,
)
from .fedrep import FedRepConfig, InitMode, embedding_gradient, local_head_solve, onboard_new_client, server_round, train
from .metrics import excess_population_risk, local_gd_baseline, monte_carlo_risk
from .privinit import client_init_statistic, private_init
from .subspace import principal_dist, qr_orthonormalize, spectral_norm, top_k_eigvecs
from .synth import (
    BatchMode,
    FeatureDistribution,
    FeatureKind,
    HeadStyle,
    gen_ground_truth,
    sample_class_data,
    sample_client_data,
    sample_federation,
)

__version__ = "0.1.0"

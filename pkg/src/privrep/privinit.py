"""Private spectral initialisation of the shared embedding.

Every user sends the label-weighted cross-term statistic ``Z_i``, whose
expectation is ``(U* v*_i)(U* v*_i)^T``. The server averages the
Frobenius-clipped statistics, adds Gaussian noise and keeps the top-k
eigenvectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dp import PrivacySpec, calibrate_init_noise, gaussian_noise_matrix
from .rng import keyed_rng
from .subspace import top_k_eigvecs
from .synth import ClientDataset, FeatureDistribution, Federation, GroundTruthModel, sample_federation


class TooFewSamples(ValueError):
    pass


@dataclass
class InitReport:
    sigma_init: float
    psi_init: float
    clip_fraction: float
    max_stat_norm: float


def client_init_statistic(dataset) -> np.ndarray:
    """Average of ``y_a y_b x_a x_b^T`` over ordered pairs ``a != b`` in S0.

    Computed in ``O(m d^2)`` as ``(s s^T - sum_j y_j^2 x_j x_j^T) / (m'(m'-1))``
    with ``s = sum_j y_j x_j``. Accepts a :class:`ClientDataset` (uses S0) or
    an ``(X, y)`` pair (used as is).
    """
    if isinstance(dataset, ClientDataset):
        X, y = dataset.s0()
    else:
        X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mp = X.shape[0]
    if mp < 2:
        raise TooFewSamples(f"need at least 2 samples in S0, got {mp}")
    s = X.T @ y
    return (np.outer(s, s) - (X * (y * y)[:, None]).T @ X) / (mp * (mp - 1))


def private_init(clients, spec: PrivacySpec | None, k: int, rng_seed: int, *,
                 noise_off: bool = False) -> tuple[np.ndarray, InitReport]:
    """Private top-k spectral estimate of ``span(U*)`` from the users' S0 halves.

    With ``noise_off`` the Gaussian noise is skipped (clipping at
    ``spec.clip_psi_init`` still applies; pass ``spec=None`` to disable
    both). Returns the ``(d, k)`` basis and an :class:`InitReport`.
    """
    fed = clients if isinstance(clients, Federation) else Federation.stack(list(clients))
    if fed.n < 1:
        raise ValueError("need at least one user")
    X0, y0 = fed.s0()
    if X0.shape[1] < 2:
        raise TooFewSamples("every user needs at least 2 samples in S0")
    psi = np.inf if spec is None else spec.clip_psi_init
    total, norms = kernels.init_accumulate(X0, y0, psi)
    Z_hat = total / fed.n
    sigma = 0.0
    if spec is not None and not noise_off:
        scale = calibrate_init_noise(spec)
        sigma = scale.sigma_hat
        Z_hat = Z_hat + gaussian_noise_matrix(fed.d, fed.d, scale, keyed_rng(rng_seed, "init_noise"))
    # symmetrising is post-processing of the noisy release
    Z_hat = 0.5 * (Z_hat + Z_hat.T)
    U = top_k_eigvecs(Z_hat, k)
    report = InitReport(
        sigma_init=sigma,
        psi_init=float(psi),
        clip_fraction=float(np.mean(norms > psi)),
        max_stat_norm=float(norms.max()),
    )
    return U, report


def init_statistic_norms(clients) -> np.ndarray:
    fed = clients if isinstance(clients, Federation) else Federation.stack(list(clients))
    X0, y0 = fed.s0()
    return kernels.init_accumulate(X0, y0, np.inf)[1]


def estimate_psi_init(model: GroundTruthModel, dist: FeatureDistribution, m: int, rng_seed: int,
                      quantile: float = 99.9, n_sim: int | None = 2000) -> float:
    """Clip bound for the init statistic from a throwaway simulated draw.

    Returns the ``quantile``-th percentile of ``||Z_i||_F`` over ``n_sim``
    fresh users sampled from ``model`` (never the users being trained on).
    """
    n = model.n if n_sim is None else min(n_sim, model.n)
    sim = sample_federation(model, dist, m, 0, 1, rng_seed, n=n, stream="psi_init_sim")
    return float(np.percentile(init_statistic_norms(sim), quantile))

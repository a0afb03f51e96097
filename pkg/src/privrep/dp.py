"""User-level DP building blocks.

Frobenius clipping, Gaussian noise calibration (an exact zCDP accountant and
the fixed formula used in the synthetic experiment), and the exponential
mechanism over a finite candidate set.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .rng import as_rng


class InfeasibleBudget(ValueError):
    pass


class EmptyCandidateSet(ValueError):
    pass


class NoiseMode(str, enum.Enum):
    ZCDP_EXACT = "zcdp"
    PAPER_EXPERIMENT = "paper"
    OFF = "off"


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float
    delta: float
    clip_psi: float
    clip_psi_init: float
    rounds: int
    n_users: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InfeasibleBudget(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.clip_psi > 0 or not self.clip_psi_init > 0:
            raise ValueError("clip bounds must be positive")
        if self.rounds < 1 or self.n_users < 1:
            raise ValueError("rounds and n_users must be positive")


@dataclass(frozen=True)
class NoiseScale:
    sigma_hat: float
    mode: NoiseMode

    def __post_init__(self):
        if self.sigma_hat < 0:
            raise ValueError("sigma_hat must be nonnegative")
        if (self.sigma_hat == 0.0) != (self.mode == NoiseMode.OFF):
            raise ValueError("sigma_hat is zero exactly when the mode is OFF")

    @classmethod
    def off(cls) -> NoiseScale:
        return cls(0.0, NoiseMode.OFF)


def clip_frobenius(M: np.ndarray, tau: float) -> np.ndarray:
    """Scale ``M`` down so that ``||M||_F <= tau``; identity when already inside."""
    if not tau > 0:
        raise ValueError(f"clip bound must be positive, got {tau}")
    M = np.asarray(M, dtype=np.float64)
    norm = float(np.linalg.norm(M))
    if norm <= tau:
        return M.copy()
    return M * (tau / norm)


def clip_factors(norms: np.ndarray, tau: float) -> np.ndarray:
    """Vectorised ``min(1, tau / norm)`` with zero norms mapping to 1."""
    norms = np.asarray(norms, dtype=np.float64)
    out = np.ones_like(norms)
    if math.isinf(tau):
        return out
    big = norms > tau
    out[big] = tau / norms[big]
    return out


# -- zCDP accounting ---------------------------------------------------------


def zcdp_to_epsilon(rho: float, delta: float) -> float:
    """(eps, delta)-DP implied by rho-zCDP: ``rho + 2 sqrt(rho log(1/delta))``."""
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def zcdp_budget(epsilon: float, delta: float) -> float:
    """Largest rho whose conversion gives exactly ``epsilon``."""
    if not epsilon > 0:
        raise InfeasibleBudget(f"epsilon must be positive, got {epsilon}")
    L = math.log(1.0 / delta)
    # sqrt(rho) is the positive root of x^2 + 2 sqrt(L) x - eps = 0
    root = epsilon / (math.sqrt(L + epsilon) + math.sqrt(L))
    return root * root


def gaussian_zcdp(sensitivity: float, sigma: float, rounds: int = 1) -> float:
    """rho spent by ``rounds`` Gaussian releases of the given L2 sensitivity."""
    if sigma == 0:
        return math.inf
    return rounds * sensitivity**2 / (2.0 * sigma**2)


def calibrate_training_noise(spec: PrivacySpec, mode: NoiseMode | str) -> NoiseScale:
    """Per-entry std of the noise added to the averaged clipped gradient.

    ``ZCDP_EXACT`` returns the smallest sigma for which ``spec.rounds``
    releases with L2 sensitivity ``clip_psi / n_users`` compose to the
    target (eps, delta). ``PAPER_EXPERIMENT`` uses
    ``psi sqrt(T) sqrt(16 log(1.25/delta)) / (n eps)``.
    """
    mode = NoiseMode(mode)
    if mode == NoiseMode.OFF:
        return NoiseScale.off()
    eps, delta, psi = spec.epsilon, spec.delta, spec.clip_psi
    T, n = spec.rounds, spec.n_users
    if mode == NoiseMode.PAPER_EXPERIMENT:
        sigma = psi * math.sqrt(T) * math.sqrt(16.0 * math.log(1.25 / delta)) / (n * eps)
    else:
        rho = zcdp_budget(eps, delta)
        sigma = (psi / n) * math.sqrt(T / (2.0 * rho))
    return NoiseScale(sigma, mode)


def calibrate_init_noise(spec: PrivacySpec) -> NoiseScale:
    """``psi_init sqrt(2 log(1.25/delta)) / (n eps)``: one Gaussian release."""
    sigma = spec.clip_psi_init * math.sqrt(2.0 * math.log(1.25 / spec.delta)) / (
        spec.n_users * spec.epsilon
    )
    if sigma == 0.0:
        return NoiseScale.off()
    return NoiseScale(sigma, NoiseMode.PAPER_EXPERIMENT)


def gaussian_noise_matrix(rows: int, cols: int, scale: NoiseScale, rng_key) -> np.ndarray:
    if scale.sigma_hat == 0.0:
        return np.zeros((rows, cols))
    rng = as_rng(rng_key)
    return scale.sigma_hat * rng.standard_normal((rows, cols))


# -- exponential mechanism ---------------------------------------------------


def exponential_weights(scores, epsilon: float, sensitivity: float) -> np.ndarray:
    """Selection probabilities ``softmax(eps * score / (2 * sensitivity))``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyCandidateSet("no candidates to select from")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    if math.isinf(epsilon):
        w = (scores == scores.max()).astype(np.float64)
        return w / w.sum()
    logits = (epsilon / (2.0 * sensitivity)) * (scores - scores.max())
    w = np.exp(logits)
    return w / w.sum()


def exponential_mechanism(candidates, scores, epsilon: float, sensitivity: float, rng_key) -> int:
    """Sample the index of one candidate with the exponential mechanism."""
    if len(candidates) == 0:
        raise EmptyCandidateSet("no candidates to select from")
    if len(candidates) != len(scores):
        raise ValueError("candidates and scores differ in length")
    w = exponential_weights(scores, epsilon, sensitivity)
    if w.size == 1:
        return 0
    u = as_rng(rng_key).random()
    cdf = np.cumsum(w)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), w.size - 1))

"""Private FedRep for linear regression.

Each round every user fits its head by least squares on one fresh batch,
computes the gradient of the batch loss in the shared embedding on a second
batch, and the server averages the clipped gradients, adds Gaussian noise,
takes a step and re-orthonormalises with QR. After the last round users fit
their final heads on the held-out half of their data.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dp import NoiseScale, PrivacySpec, clip_factors, gaussian_noise_matrix
from .rng import keyed_rng
from .subspace import check_orthonormal, principal_dist, qr_orthonormalize
from .synth import ClientDataset, Federation, GroundTruthModel

log = logging.getLogger(__name__)


class IllConditioned(np.linalg.LinAlgError):
    pass


class InitMode(str, enum.Enum):
    PROVIDED = "provided"
    PRIVATE = "private"
    RANDOM = "random"


@dataclass
class FedRepConfig:
    T: int
    b: int
    eta: float | None = None
    clip_psi: float = math.inf
    noise: NoiseScale = field(default_factory=NoiseScale.off)
    lambda_bound: float | None = None
    Lambda_bound: float | None = None
    init: InitMode = InitMode.RANDOM
    init_basis: np.ndarray | None = None
    # privacy parameters for the private initializer (InitMode.PRIVATE)
    init_spec: PrivacySpec | None = None
    init_noise_off: bool = False

    def __post_init__(self):
        self.init = InitMode(self.init)
        if self.eta is None:
            if self.Lambda_bound is None:
                raise ValueError("eta is required unless Lambda_bound is given")
            self.eta = 1.0 / (2.0 * self.Lambda_bound**2)
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.clip_psi > 0:
            raise ValueError("clip_psi must be positive")
        if self.T < 0 or self.b < 1:
            raise ValueError("need T >= 0 and b >= 1")
        if self.lambda_bound is not None and self.Lambda_bound is not None:
            if not self.Lambda_bound >= self.lambda_bound > 0:
                raise ValueError("need Lambda_bound >= lambda_bound > 0")
        if self.init == InitMode.PROVIDED and self.init_basis is None:
            raise ValueError("init=provided needs init_basis")
        if self.init == InitMode.PRIVATE and self.init_spec is None:
            raise ValueError("init=private needs init_spec")


@dataclass
class EmbeddingState:
    basis: np.ndarray
    round: int = 0
    r_factor: np.ndarray | None = None


@dataclass
class LocalHead:
    v: np.ndarray
    client_id: int
    pinv_fallback: bool = False


@dataclass
class TraceRow:
    round: int
    dist_to_ustar: float
    max_grad_norm: float
    clip_fraction: float
    pinv_fraction: float


@dataclass
class TraceLog:
    rows: list[TraceRow] = field(default_factory=list)
    init_dist: float = math.nan

    def dists(self) -> np.ndarray:
        return np.array([r.dist_to_ustar for r in self.rows])

    def clip_rate(self) -> float:
        if not self.rows:
            return 0.0
        return float(np.mean([r.clip_fraction for r in self.rows]))

    def format(self) -> str:
        lines = ["round  dist_to_ustar  max_grad_norm  clip_frac  pinv_frac"]
        for r in self.rows:
            lines.append(
                f"{r.round:5d}  {r.dist_to_ustar:13.6e}  {r.max_grad_norm:13.6e}"
                f"  {r.clip_fraction:9.4f}  {r.pinv_fraction:9.4f}"
            )
        return "\n".join(lines)


# -- client side -------------------------------------------------------------


def local_head_solve(U, X, y, *, fallback: bool = True, client_id: int = -1) -> LocalHead:
    """Exact least-squares head ``argmin_v mean((y - X U v)^2)``.

    Uses the normal equations when the projected Gram matrix is well
    conditioned (condition number below 1e12). Otherwise returns the
    minimum-norm pseudoinverse solution with ``pinv_fallback=True``, or
    raises :class:`IllConditioned` when ``fallback`` is false.
    """
    U = np.asarray(U, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise IllConditioned("empty batch")
    A = X @ U
    k = U.shape[1]
    if X.shape[0] >= k:
        G = A.T @ A
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(G)
        if np.isfinite(cond) and cond < kernels.COND_MAX:
            return LocalHead(np.linalg.solve(G, A.T @ y), client_id, False)
    if not fallback:
        raise IllConditioned(f"projected Gram matrix is singular or ill conditioned (b={X.shape[0]}, k={k})")
    return LocalHead(np.linalg.pinv(A) @ y, client_id, True)


def embedding_gradient(U, v, X, y) -> np.ndarray:
    """``(2/b) sum_j (<x_j, U v> - y_j) x_j v^T``: gradient in ``U`` of the batch MSE."""
    v = v.v if isinstance(v, LocalHead) else np.asarray(v, dtype=np.float64)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    resid = X @ (np.asarray(U) @ v) - y
    return (2.0 / X.shape[0]) * np.outer(X.T @ resid, v)


# -- server side -------------------------------------------------------------


def aggregate_clipped(grads: np.ndarray, psi: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean of Frobenius-clipped gradients in client order.

    Returns ``(mean, norms, factors)``.
    """
    grads = np.asarray(grads, dtype=np.float64)
    norms = np.sqrt(np.einsum("nij,nij->n", grads, grads))
    factors = clip_factors(norms, psi)
    mean = kernels.pairwise_sum(grads * factors[:, None, None]) / grads.shape[0]
    return mean, norms, factors


def _step(state, mean_grad, cfg, noise_rng):
    d, k = state.basis.shape
    xi = gaussian_noise_matrix(d, k, cfg.noise, noise_rng)
    U_hat = state.basis - cfg.eta * (mean_grad + xi)
    Q, P = qr_orthonormalize(U_hat)
    return EmbeddingState(Q, state.round + 1, P)


def server_round(state: EmbeddingState, client_grads, cfg: FedRepConfig, rng_key) -> EmbeddingState:
    """Clip, average, add noise, take the ``eta`` step and re-orthonormalise."""
    if cfg.T and state.round >= cfg.T:
        raise ValueError(f"round {state.round} is past the configured T={cfg.T}")
    grads = np.asarray(client_grads, dtype=np.float64)
    if grads.ndim != 3 or grads.shape[1:] != state.basis.shape:
        raise ValueError(f"gradients of shape {grads.shape} do not match basis {state.basis.shape}")
    mean, _, _ = aggregate_clipped(grads, cfg.clip_psi)
    return _step(state, mean, cfg, rng_key)


# -- driver ------------------------------------------------------------------


def random_orthonormal(d: int, k: int, rng_seed: int) -> np.ndarray:
    return qr_orthonormalize(keyed_rng(rng_seed, "random_init").standard_normal((d, k)))[0]


def suggest_rounds(Lambda_bound: float, lambda_bound: float, n: int) -> int:
    """``ceil((Lambda/lambda)^2 log(n^3))`` with the unknown constant set to 1."""
    T = int(math.ceil((Lambda_bound / lambda_bound) ** 2 * math.log(float(n) ** 3)))
    log.info("suggested T = %d (constant 1; not applied automatically)", T)
    return T


def _initial_basis(fed: Federation, cfg: FedRepConfig, k: int, rng_seed: int) -> np.ndarray:
    if cfg.init == InitMode.PROVIDED:
        U0 = np.asarray(cfg.init_basis, dtype=np.float64)
        check_orthonormal(U0)
        return U0.copy()
    if cfg.init == InitMode.RANDOM:
        return random_orthonormal(fed.d, k, rng_seed)
    from .privinit import private_init

    U0, _ = private_init(fed, cfg.init_spec, k, rng_seed, noise_off=cfg.init_noise_off)
    return U0


def fit_heads(U, X, y, client_ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares heads for stacked data ``X (n, m, d)``; returns ``(V, fallback)``."""
    # head solve only: the gradient half of the kernel gets a dummy batch
    heads, _, fallback = kernels.client_round(U, X, y, X[:, :1], y[:, :1])
    return heads, fallback


def train(clients, cfg: FedRepConfig, rng_seed: int, *, k: int | None = None,
          ground_truth: GroundTruthModel | None = None):
    """Run Private FedRep end to end.

    ``clients`` is a :class:`Federation` or a list of :class:`ClientDataset`.
    Returns ``(final EmbeddingState, list of LocalHead, TraceLog)``. With
    ``cfg.noise`` off and ``cfg.clip_psi = inf`` this is plain FedRep.
    """
    fed = clients if isinstance(clients, Federation) else Federation.stack(list(clients))
    if k is None:
        if ground_truth is not None:
            k = ground_truth.k
        elif cfg.init_basis is not None:
            k = cfg.init_basis.shape[1]
        else:
            raise ValueError("rank k is unknown; pass k=")
    if fed.rounds < cfg.T:
        raise ValueError(f"batch schedule covers {fed.rounds} rounds, need {cfg.T}")
    if fed.b != cfg.b:
        raise ValueError(f"dataset batch size {fed.b} differs from cfg.b={cfg.b}")

    state = EmbeddingState(_initial_basis(fed, cfg, k, rng_seed))
    trace = TraceLog()
    if ground_truth is not None:
        trace.init_dist = principal_dist(ground_truth.u_star, state.basis)

    for t in range(cfg.T):
        Xh, yh = fed.gather(t, 0)
        Xg, yg = fed.gather(t, 1)
        _, grads, fallback = kernels.client_round(state.basis, Xh, yh, Xg, yg)
        mean, norms, factors = aggregate_clipped(grads, cfg.clip_psi)
        state = _step(state, mean, cfg, keyed_rng(rng_seed, "fedrep_noise", t))
        dist = principal_dist(ground_truth.u_star, state.basis) if ground_truth is not None else math.nan
        trace.rows.append(
            TraceRow(
                round=t + 1,
                dist_to_ustar=dist,
                max_grad_norm=float(norms.max()),
                clip_fraction=float(np.mean(factors < 1.0)),
                pinv_fraction=float(np.mean(fallback)),
            )
        )

    X1, y1 = fed.s1()
    V, fallback = fit_heads(state.basis, X1, y1)
    heads = [LocalHead(V[i], int(cid), bool(fallback[i])) for i, cid in enumerate(fed.client_ids)]
    return state, heads, trace


def heads_matrix(heads: list[LocalHead]) -> np.ndarray:
    return np.stack([h.v for h in sorted(heads, key=lambda h: h.client_id)])


def onboard_new_client(U_priv, dataset: ClientDataset | tuple) -> LocalHead:
    """Least-squares head for a user who joins after training; spends no privacy."""
    if isinstance(dataset, ClientDataset):
        X, y, cid = dataset.features, dataset.labels, dataset.client_id
    else:
        X, y = dataset
        cid = -1
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        raise IllConditioned("new client has no data")
    return local_head_solve(U_priv, X, y, client_id=cid)

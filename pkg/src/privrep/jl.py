"""Private shared representation for margin classification via a JL sketch.

Features are sketched to ``k'`` dimensions with a random sign matrix, the
exponential mechanism picks a ``k' x k`` embedding from a Frobenius cover of
the radius-``sqrt(2k)`` ball using the (negated) best-head margin loss as the
score, and the pick is lifted back to ``d x k`` through the sketch.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dp import exponential_mechanism
from .rng import as_rng, keyed_rng
from .synth import BoundedClassDataset


class CoverTooLarge(ValueError):
    def __init__(self, cardinality: int, cap: int):
        super().__init__(f"lattice cover would hold ~{cardinality} points (cap {cap})")
        self.cardinality = cardinality


class ResolutionTooCoarse(UserWarning):
    pass


class Solver(str, enum.Enum):
    EXACT_1D = "exact1d"
    GRID = "grid"


class CoverKind(str, enum.Enum):
    LATTICE = "lattice"
    RANDOM_NET = "random"


@dataclass(frozen=True)
class JLSketch:
    matrix: np.ndarray  # (k', d), entries +-1/sqrt(k')

    @property
    def target_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def source_dim(self) -> int:
        return self.matrix.shape[1]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Sketch row vectors: ``x -> M x``."""
        return np.asarray(X) @ self.matrix.T


@dataclass(frozen=True)
class CoverSpec:
    gamma_cover: float
    k_prime: int
    k: int
    kind: CoverKind = CoverKind.LATTICE
    count: int = 0  # RandomNet size
    cap: int = 1_000_000

    def __post_init__(self):
        if not 0 < self.gamma_cover <= 1:
            raise ValueError(f"cover radius must lie in (0, 1], got {self.gamma_cover}")
        if CoverKind(self.kind) == CoverKind.RANDOM_NET and self.count < 1:
            raise ValueError("a random net needs count >= 1")

    @property
    def ball_radius(self) -> float:
        return math.sqrt(2 * self.k)


@dataclass(frozen=True)
class MarginParams:
    rho: float
    Gamma: float
    r: float

    def __post_init__(self):
        if not (self.rho > 0 and self.Gamma > 0 and self.r > 0):
            raise ValueError("rho, Gamma and r must be positive")


@dataclass
class Cover:
    points: np.ndarray  # (N, k', k)
    heuristic: bool = False


@dataclass
class ClassifyReport:
    k_prime: int
    cover_size: int
    cover_heuristic: bool
    score_min: float
    score_max: float
    selected_index: int
    selected_score: float
    selected_rank: int  # 0 = best score
    extras: dict = field(default_factory=dict)


# -- sketch ------------------------------------------------------------------


def sample_jl(d: int, k_prime: int, rng_key) -> JLSketch:
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    rng = as_rng(rng_key)
    signs = rng.integers(0, 2, size=(k_prime, d)) * 2.0 - 1.0
    return JLSketch(signs / math.sqrt(k_prime))


def default_k_prime(r: float, Gamma: float, rho: float, n: int, m: int,
                    beta: float = 0.05, const: float = 8.0) -> int:
    """``ceil(const r^2 Gamma^2 log(n m / beta) / rho^2)``."""
    return int(math.ceil(const * r * r * Gamma * Gamma * math.log(n * m / beta) / (rho * rho)))


# -- losses and head fitting ---------------------------------------------------


def margin_empirical_loss(U_eff, v, X, y, rho: float) -> float:
    """Fraction of samples with ``y <x, U_eff v> <= rho`` (``X`` already sketched if needed)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    scores = np.asarray(y) * (X @ (np.asarray(U_eff) @ np.atleast_1d(v)))
    return float(np.mean(scores <= rho))


def head_grid(Gamma: float, k: int, res: int) -> np.ndarray:
    """Uniform ``res^k`` grid on ``[-Gamma, Gamma]^k`` cut to the Gamma-ball.

    Rows are sorted by norm, then lexicographically, so ``argmin`` over a
    loss vector implements the tie-break rule.
    """
    axis = np.linspace(-Gamma, Gamma, res)
    pts = np.array(list(itertools.product(axis, repeat=k)))
    norms = np.linalg.norm(pts, axis=1)
    pts = pts[norms <= Gamma * (1 + 1e-12)]
    norms = np.linalg.norm(pts, axis=1)
    order = np.lexsort(tuple(pts[:, j] for j in reversed(range(k))) + (np.round(norms, 12),))
    return pts[order]


def _exact_1d(s: np.ndarray, rho: float, Gamma: float) -> tuple[float, float]:
    m = s.size
    with np.errstate(divide="ignore"):
        t = rho / s[s != 0.0]
    pts = np.sort(np.concatenate([t[(t > -Gamma) & (t < Gamma)], [-Gamma, Gamma]]))
    cand = np.concatenate([0.5 * (pts[1:] + pts[:-1]), [-Gamma, Gamma]])
    losses = (s[None, :] * cand[:, None] <= rho).sum(axis=1)
    best = losses.min()
    ties = cand[losses == best]
    v = ties[np.lexsort((ties, np.abs(ties)))][0]
    return float(v), best / m


def best_head_margin(U_eff, X, y, rho: float, Gamma: float, solver=Solver.EXACT_1D,
                     res: int = 101, r: float | None = None) -> tuple[np.ndarray, float]:
    """Minimise the empirical margin loss over heads with ``||v|| <= Gamma``.

    ``EXACT_1D`` (one-column embeddings) enumerates the loss breakpoints and
    is exact. ``GRID`` evaluates a ``res``-per-axis grid on the Gamma-ball and
    warns with :class:`ResolutionTooCoarse` if the spacing exceeds
    ``rho / (2 r sqrt(k))``.
    """
    U_eff = np.asarray(U_eff, dtype=np.float64)
    if U_eff.ndim == 1:
        U_eff = U_eff[:, None]
    k = U_eff.shape[1]
    feats = np.atleast_2d(np.asarray(X, dtype=np.float64)) @ U_eff
    signed = np.asarray(y, dtype=np.float64)[:, None] * feats
    solver = Solver(solver)
    if solver == Solver.EXACT_1D:
        if k != 1:
            raise ValueError("the exact solver handles one-column embeddings only")
        v, loss = _exact_1d(signed[:, 0], rho, Gamma)
        return np.array([v]), loss
    grid = head_grid(Gamma, k, res)
    spacing = 2 * Gamma / (res - 1)
    if r is not None and spacing > rho / (2 * r * math.sqrt(k)):
        warnings.warn(
            f"grid spacing {spacing:.3g} exceeds rho/(2 r sqrt(k)) = {rho / (2 * r * math.sqrt(k)):.3g}",
            ResolutionTooCoarse,
            stacklevel=2,
        )
    losses = (signed @ grid.T <= rho).mean(axis=0)
    g = int(np.argmin(losses))
    return grid[g].copy(), float(losses[g])


# -- cover -------------------------------------------------------------------


def lattice_cardinality(spec: CoverSpec) -> int:
    """Upper estimate of the lattice size (cube of half-width R + gamma/2)."""
    D = spec.k_prime * spec.k
    h = spec.gamma_cover / math.sqrt(D)
    per_axis = 2 * math.floor((spec.ball_radius + spec.gamma_cover / 2) / h) + 1
    return per_axis**D


def build_cover(spec: CoverSpec, rng_key=None) -> Cover:
    """Finite set of ``k' x k`` matrices covering the radius-sqrt(2k) Frobenius ball.

    The lattice uses spacing ``gamma / sqrt(k' k)`` so every ball point lies
    within ``gamma / 2`` of a lattice point; points are kept when their norm
    is at most ``sqrt(2k) + gamma / 2``, which retains every nearest
    neighbour. ``RANDOM_NET`` samples the ball uniformly and carries no cover
    guarantee (``heuristic=True``).
    """
    kp, k = spec.k_prime, spec.k
    D = kp * k
    R = spec.ball_radius
    if CoverKind(spec.kind) == CoverKind.RANDOM_NET:
        rng = as_rng(0 if rng_key is None else rng_key)
        g = rng.standard_normal((spec.count, D))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        pts = g * (R * rng.random(spec.count) ** (1.0 / D))[:, None]
        return Cover(pts.reshape(-1, kp, k), heuristic=True)
    card = lattice_cardinality(spec)
    if card > spec.cap:
        raise CoverTooLarge(card, spec.cap)
    h = spec.gamma_cover / math.sqrt(D)
    reach = R + spec.gamma_cover / 2
    j = math.floor(reach / h)
    axis = h * np.arange(-j, j + 1)
    pts = np.array(list(itertools.product(axis, repeat=D)))
    pts = pts[np.linalg.norm(pts, axis=1) <= reach + 1e-12]
    return Cover(pts.reshape(-1, kp, k), heuristic=False)


# -- scoring and the full pipeline --------------------------------------------------


def _signed_features(cover_pts, sketched, labels):
    # (C, n, m, k): y_ij * U_c^T (M x_ij)
    return np.einsum("ijp,cpk,ij->cijk", sketched, cover_pts, labels)


def score_cover(cover_pts: np.ndarray, sketched: np.ndarray, labels: np.ndarray, rho: float,
                Gamma: float, solver=Solver.EXACT_1D, res: int = 101, chunk: int = 256) -> np.ndarray:
    """Score ``f(U') = -(1/n) sum_i min_{||v|| <= Gamma} L_rho(U', v; (S_i)_M)`` per cover point.

    ``sketched`` is ``(n, m0, k')`` and ``labels`` ``(n, m0)``.
    """
    cover_pts = np.asarray(cover_pts, dtype=np.float64)
    k = cover_pts.shape[2]
    solver = Solver(solver)
    if solver == Solver.EXACT_1D and k != 1:
        raise ValueError("the exact solver handles one-column embeddings only")
    grid = head_grid(Gamma, k, res) if solver == Solver.GRID else None
    out = np.empty(cover_pts.shape[0])
    for lo in range(0, cover_pts.shape[0], chunk):
        F = _signed_features(cover_pts[lo : lo + chunk], sketched, labels)
        if solver == Solver.EXACT_1D:
            losses = kernels.margin_min_loss_1d(F[..., 0], rho, Gamma)
        else:
            losses = kernels.margin_min_loss_grid(F, grid, rho)
        out[lo : lo + chunk] = -losses.mean(axis=1)
    return out


def private_classify(datasets: list[BoundedClassDataset], params: MarginParams, epsilon: float,
                     cover: CoverSpec, rng_seed: int, *, k_prime: int | None = None,
                     solver=Solver.EXACT_1D, res: int = 101, head_rho: float = 0.0,
                     beta: float = 0.05, k_prime_const: float = 8.0):
    """Private shared embedding and per-user heads for margin classification.

    Returns ``(U_priv (d, k), heads (n, k), ClassifyReport)``. ``U_priv`` is
    ``M^T U~`` and is generally not orthonormal. Heads are fit on each
    user's S1 half by minimising the loss at margin ``head_rho`` (0 gives
    the 0-1 loss).
    """
    if not datasets:
        raise ValueError("no users")
    n = len(datasets)
    d = datasets[0].features.shape[1]
    m = datasets[0].m
    if k_prime is None:
        k_prime = default_k_prime(params.r, params.Gamma, params.rho, n, m, beta, k_prime_const)
    if cover.k_prime != k_prime:
        raise ValueError(f"cover built for k'={cover.k_prime} but k'={k_prime}")
    sketch = sample_jl(d, k_prime, keyed_rng(rng_seed, "jl_sketch"))

    X0 = np.stack([ds.s0()[0] for ds in datasets])
    y0 = np.stack([ds.s0()[1] for ds in datasets])
    sketched = X0 @ sketch.matrix.T

    cov = build_cover(cover, keyed_rng(rng_seed, "cover"))
    scores = score_cover(cov.points, sketched, y0, params.rho, params.Gamma, solver, res)
    idx = exponential_mechanism(cov.points, scores, epsilon, 1.0 / n, keyed_rng(rng_seed, "expmech"))
    U_tilde = cov.points[idx]
    U_priv = sketch.matrix.T @ U_tilde

    heads = np.empty((n, cover.k))
    for i, ds in enumerate(datasets):
        X1, y1 = ds.s1()
        heads[i], _ = best_head_margin(U_priv, X1, y1, head_rho, params.Gamma, solver, res)

    report = ClassifyReport(
        k_prime=k_prime,
        cover_size=cov.points.shape[0],
        cover_heuristic=cov.heuristic,
        score_min=float(scores.min()),
        score_max=float(scores.max()),
        selected_index=int(idx),
        selected_score=float(scores[idx]),
        selected_rank=int(np.sum(scores > scores[idx])),
        extras={"sketch": sketch, "U_tilde": U_tilde},
    )
    return U_priv, heads, report

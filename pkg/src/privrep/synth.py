"""Planted low-rank models and per-user synthetic datasets.

Regression users draw isotropic features and labels
``y = <x, U* v*_i> + N(0, R^2)``. Classification users draw features
uniformly from a radius-``r`` ball and label them by the sign of the same
inner product, optionally rejecting points inside a margin.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import as_rng, keyed_rng
from .subspace import RankDeficient, qr_orthonormalize


class BatchBudgetExceeded(ValueError):
    pass


class MarginInfeasible(RuntimeError):
    pass


class HeadStyle(str, enum.Enum):
    GAUSSIAN = "gaussian"
    UNIT = "unit"


class FeatureKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    SPHERE = "sphere"


class BatchMode(str, enum.Enum):
    # 2T disjoint batches carved once out of S0 (needs 2Tb <= m/2)
    PARTITION = "partition"
    # each round draws its two disjoint batches afresh from S0 (needs 2b <= m/2)
    RESAMPLE = "resample"


@dataclass(frozen=True)
class FeatureDistribution:
    """Isotropic, 1-sub-Gaussian feature law on R^d."""

    kind: FeatureKind
    dim: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        kind = FeatureKind(self.kind)
        if kind == FeatureKind.GAUSSIAN:
            return rng.standard_normal((size, self.dim))
        if kind == FeatureKind.RADEMACHER:
            return rng.choice(np.array([-1.0, 1.0]), size=(size, self.dim))
        g = rng.standard_normal((size, self.dim))
        return g * (np.sqrt(self.dim) / np.linalg.norm(g, axis=1, keepdims=True))


@dataclass(frozen=True)
class GroundTruthModel:
    u_star: np.ndarray
    v_star: np.ndarray
    noise_R: float
    gamma_head: float
    sigma_min_star: float
    sigma_max_star: float

    @property
    def d(self) -> int:
        return self.u_star.shape[0]

    @property
    def k(self) -> int:
        return self.u_star.shape[1]

    @property
    def n(self) -> int:
        return self.v_star.shape[0]

    @property
    def condition_number(self) -> float:
        return self.sigma_max_star / self.sigma_min_star

    def user_params(self) -> np.ndarray:
        """``(n, d)`` array whose rows are ``U* v*_i``."""
        return self.v_star @ self.u_star.T


@dataclass
class ClientDataset:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    batch_schedule: np.ndarray  # (2T, b) indices into S0
    batch_mode: BatchMode = BatchMode.PARTITION

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def split_index(self) -> int:
        return self.m // 2

    def s0(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.split_index
        return self.features[:h], self.labels[:h]

    def s1(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.split_index
        return self.features[h:], self.labels[h:]

    def batch(self, t: int, which: int) -> tuple[np.ndarray, np.ndarray]:
        """Batch ``B_{i,t}`` (which=0) or ``B'_{i,t}`` (which=1)."""
        idx = self.batch_schedule[2 * t + which]
        return self.features[idx], self.labels[idx]


@dataclass
class Federation:
    """All users' data stacked into dense arrays for the batched kernels."""

    features: np.ndarray  # (n, m, d)
    labels: np.ndarray  # (n, m)
    batch_schedule: np.ndarray  # (n, 2T, b)
    client_ids: np.ndarray = field(default=None)
    batch_mode: BatchMode = BatchMode.PARTITION

    def __post_init__(self):
        if self.client_ids is None:
            self.client_ids = np.arange(self.features.shape[0])

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    @property
    def rounds(self) -> int:
        return self.batch_schedule.shape[1] // 2

    @property
    def b(self) -> int:
        return self.batch_schedule.shape[2]

    @classmethod
    def stack(cls, clients: list[ClientDataset]) -> Federation:
        if not clients:
            raise ValueError("no clients")
        order = sorted(clients, key=lambda c: c.client_id)
        return cls(
            features=np.stack([c.features for c in order]),
            labels=np.stack([c.labels for c in order]),
            batch_schedule=np.stack([c.batch_schedule for c in order]),
            client_ids=np.array([c.client_id for c in order]),
            batch_mode=order[0].batch_mode,
        )

    def client(self, i: int) -> ClientDataset:
        return ClientDataset(
            client_id=int(self.client_ids[i]),
            features=self.features[i],
            labels=self.labels[i],
            batch_schedule=self.batch_schedule[i],
            batch_mode=self.batch_mode,
        )

    def gather(self, t: int, which: int) -> tuple[np.ndarray, np.ndarray]:
        """Stacked batch ``t`` for every user: ``(n, b, d)`` and ``(n, b)``."""
        idx = self.batch_schedule[:, 2 * t + which, :]
        rows = np.arange(self.n)[:, None]
        return self.features[rows, idx], self.labels[rows, idx]

    def s0(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.m // 2
        return self.features[:, :h], self.labels[:, :h]

    def s1(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.m // 2
        return self.features[:, h:], self.labels[:, h:]


def gen_ground_truth(d, k, n, head_style=HeadStyle.GAUSSIAN, noise_R=0.0, rng_seed=0) -> GroundTruthModel:
    """Draw ``U*`` as the Q factor of a Gaussian ``d x k`` matrix and heads ``V*``."""
    if not 1 <= k <= min(d, n):
        raise ValueError(f"need 1 <= k <= min(d, n), got d={d}, k={k}, n={n}")
    if noise_R < 0:
        raise ValueError("noise_R must be nonnegative")
    head_style = HeadStyle(head_style)
    rng = as_rng(rng_seed, "ground_truth")
    u_star, _ = qr_orthonormalize(rng.standard_normal((d, k)))
    for _ in range(10):
        V = rng.standard_normal((n, k))
        if head_style == HeadStyle.UNIT:
            V /= np.linalg.norm(V, axis=1, keepdims=True)
        s = np.linalg.svd(V / np.sqrt(n), compute_uv=False)
        if s[-1] > 1e-12 * s[0]:
            break
    else:
        raise RankDeficient("sampled V* has rank < k ten times in a row")
    return GroundTruthModel(
        u_star=u_star,
        v_star=V,
        noise_R=float(noise_R),
        gamma_head=float(np.max(np.linalg.norm(V, axis=1))),
        sigma_min_star=float(s[-1]),
        sigma_max_star=float(s[0]),
    )


def _check_budget(m: int, T: int, b: int, mode: BatchMode) -> None:
    if b < 1 or T < 0:
        raise ValueError("need b >= 1 and T >= 0")
    half = m // 2
    need = 2 * T * b if mode == BatchMode.PARTITION else (2 * b if T > 0 else 0)
    if need > half:
        raise BatchBudgetExceeded(
            f"{mode.value} batching needs {need} samples from S0 but |S0| = {half} "
            f"(m={m}, T={T}, b={b})"
        )


def _schedule(rng: np.random.Generator, m: int, T: int, b: int, mode: BatchMode) -> np.ndarray:
    half = m // 2
    if T == 0:
        return np.zeros((0, b), dtype=np.int64)
    if mode == BatchMode.PARTITION:
        return rng.permutation(half)[: 2 * T * b].reshape(2 * T, b)
    rounds = [rng.permutation(half)[: 2 * b].reshape(2, b) for _ in range(T)]
    return np.concatenate(rounds, axis=0)


def _draw_client(model, dist, m, T, b, client_id, seed, mode, stream="data"):
    rng = keyed_rng(seed, stream, client_id)
    X = dist.sample(rng, m)
    w = model.u_star @ model.v_star[client_id]
    y = X @ w
    if model.noise_R > 0:
        y = y + model.noise_R * rng.standard_normal(m)
    sched = _schedule(keyed_rng(seed, stream, "batches", client_id), m, T, b, mode)
    return X, y, sched


def sample_client_data(model, dist, m, T, b, client_id, rng_seed, batch_mode=BatchMode.PARTITION) -> ClientDataset:
    """One user's dataset; deterministic in ``(rng_seed, client_id)``."""
    mode = BatchMode(batch_mode)
    _check_budget(m, T, b, mode)
    if not 0 <= client_id < model.n:
        raise IndexError(f"client_id {client_id} outside [0, {model.n})")
    X, y, sched = _draw_client(model, dist, m, T, b, client_id, rng_seed, mode)
    return ClientDataset(client_id, X, y, sched, mode)


def sample_federation(model, dist, m, T, b, rng_seed, batch_mode=BatchMode.PARTITION, n=None,
                      stream="data") -> Federation:
    """Every user's dataset at once; user ``i`` matches ``sample_client_data(..., i, ...)``.

    ``stream`` names an alternative keyed stream for throwaway simulations.
    """
    mode = BatchMode(batch_mode)
    _check_budget(m, T, b, mode)
    n = model.n if n is None else n
    X = np.empty((n, m, dist.dim))
    y = np.empty((n, m))
    sched = np.empty((n, 2 * T, b), dtype=np.int64)
    for i in range(n):
        X[i], y[i], sched[i] = _draw_client(model, dist, m, T, b, i, rng_seed, mode, stream)
    return Federation(X, y, sched, np.arange(n), mode)


# -- classification ----------------------------------------------------------


@dataclass
class BoundedClassDataset:
    client_id: int
    features: np.ndarray
    labels: np.ndarray
    radius: float

    @property
    def m(self) -> int:
        return self.features.shape[0]

    def s0(self):
        h = self.m // 2
        return self.features[:h], self.labels[:h]

    def s1(self):
        h = self.m // 2
        return self.features[h:], self.labels[h:]


@dataclass(frozen=True)
class ClassModel:
    """Planted linear classifiers ``sign(<x, U* v*_i>)`` on the radius-r ball."""

    u_star: np.ndarray
    v_star: np.ndarray
    radius: float
    margin: float | None = None

    @property
    def n(self) -> int:
        return self.v_star.shape[0]

    def sample_user(self, i: int, size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        w = self.u_star @ self.v_star[i]
        return _ball_labelled(w, self.radius, size, self.margin, rng)


def sample_ball(rng: np.random.Generator, size: int, d: int, r: float) -> np.ndarray:
    g = rng.standard_normal((size, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (r * rng.random(size) ** (1.0 / d))[:, None]


def _ball_labelled(w, r, size, margin, rng, max_attempts=100_000):
    d = w.shape[0]
    X = np.empty((size, d))
    got = 0
    tried = 0
    while got < size:
        chunk = max(64, 2 * (size - got))
        cand = sample_ball(rng, chunk, d, r)
        s = cand @ w
        if margin is not None:
            cand = cand[np.abs(s) >= margin]
        tried += chunk
        take = min(size - got, cand.shape[0])
        X[got : got + take] = cand[:take]
        got += take
        if got < size and tried >= max_attempts and got < 1e-3 * tried:
            raise MarginInfeasible(
                f"accepted {got} of {tried} draws for margin {margin} at radius {r}"
            )
    y = np.where(X @ w > 0, 1.0, -1.0)
    return X, y


def sample_class_data(u_star, v_star, r, m, n, margin=None, rng_seed=0) -> list[BoundedClassDataset]:
    """``n`` users of ``m`` labelled points each, uniform in the radius-``r`` ball.

    With ``margin = rho`` points with ``|<x, U* v*_i>| < rho`` are rejected
    and redrawn.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    model = ClassModel(np.asarray(u_star), np.asarray(v_star), r, margin)
    out = []
    for i in range(n):
        X, y = model.sample_user(i, m, keyed_rng(rng_seed, "class_data", i))
        out.append(BoundedClassDataset(i, X, y, r))
    return out


# -- debugging dumps ---------------------------------------------------------


def dump_client_csv(ds, path) -> None:
    path = Path(path)
    d = ds.features.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j + 1}" for j in range(d)] + ["y"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def load_client_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))
    return data[:, :-1], data[:, -1]

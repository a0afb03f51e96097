"""Risk evaluation and the local gradient-descent baseline."""

from __future__ import annotations

import numpy as np

from .rng import as_rng, keyed_rng
from .synth import ClassModel, FeatureDistribution, Federation, GroundTruthModel


class Diverged(RuntimeError):
    pass


def excess_population_risk(U, heads, model: GroundTruthModel) -> float:
    """Closed-form excess squared-loss risk under isotropic features.

    ``(1/n) sum_i ||U v_i - U* v*_i||^2``; ``U`` need not be orthonormal.
    """
    U = np.asarray(U, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64)
    if heads.shape[0] != model.n or U.shape[0] != model.d or U.shape[1] != heads.shape[1]:
        raise ValueError(f"shapes U{U.shape}, heads{heads.shape} do not fit the model (d={model.d}, n={model.n})")
    diff = heads @ U.T - model.user_params()
    return float(np.mean(np.einsum("nd,nd->n", diff, diff)))


def monte_carlo_risk(U, heads, model: GroundTruthModel, dist: FeatureDistribution,
                     n_samples: int, rng_key, chunk: int = 100_000) -> float:
    """Monte-Carlo estimate of the same excess risk from fresh labelled draws.

    Per user, the mean of ``(y - <x, U v_i>)^2`` over ``n_samples`` draws
    minus ``R^2``, averaged over users.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    U = np.asarray(U, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64)
    W_hat = heads @ U.T
    W = model.user_params()
    seed_rng = as_rng(rng_key)
    base = int(seed_rng.integers(0, 2**62))
    per_user = np.empty(model.n)
    for i in range(model.n):
        rng = keyed_rng(base, "mc_risk", i)
        total = 0.0
        left = n_samples
        while left:
            c = min(chunk, left)
            X = dist.sample(rng, c)
            y = X @ W[i] + model.noise_R * rng.standard_normal(c)
            r = y - X @ W_hat[i]
            total += float(r @ r)
            left -= c
        per_user[i] = total / n_samples - model.noise_R**2
    return float(per_user.mean())


def classification_population_loss(U, heads, class_model: ClassModel, n_samples: int, rng_key) -> float:
    """Monte-Carlo 0-1 loss on fresh draws; a score of exactly 0 counts as an error."""
    U = np.asarray(U, dtype=np.float64)
    heads = np.asarray(heads, dtype=np.float64)
    base = int(as_rng(rng_key).integers(0, 2**62))
    errs = np.empty(class_model.n)
    for i in range(class_model.n):
        X, y = class_model.sample_user(i, n_samples, keyed_rng(base, "class_pop", i))
        errs[i] = np.mean(y * (X @ (U @ heads[i])) <= 0.0)
    return float(errs.mean())


def local_gd_baseline(clients, steps: int = 500, lr: float | np.ndarray | None = None,
                      model: GroundTruthModel | None = None, patience: int = 5):
    """Each user runs full-batch GD on its own least squares over ``w in R^d``.

    Starts from ``w = 0`` on all ``m`` samples. The default step size is
    ``1 / (2 lambda_max(X^T X / m))`` per user, the reciprocal of the
    loss's curvature. Returns ``(W (n, d), excess risk or None)``. Raises
    :class:`Diverged` if a user's loss rises ``patience`` steps in a row.
    """
    fed = clients if isinstance(clients, Federation) else Federation.stack(list(clients))
    X, y = fed.features, fed.labels
    n, m, d = X.shape
    if lr is None:
        # X^T X and X X^T share their nonzero spectrum; use the smaller one
        small = np.einsum("nad,nbd->nab", X, X) if m <= d else np.einsum("nmd,nme->nde", X, X)
        gram_top = np.linalg.eigvalsh(small / m)[:, -1]
        lr = 1.0 / (2.0 * np.maximum(gram_top, 1e-300))
    lr = np.broadcast_to(np.asarray(lr, dtype=np.float64), (n,))
    if np.any(lr <= 0):
        raise ValueError("lr must be positive")
    # from w = 0 every iterate stays in the row space, w = X^T a, so iterate on
    # the m-dimensional coefficients a with the m x m kernel X X^T
    K = np.matmul(X, np.swapaxes(X, 1, 2))
    a = np.zeros((n, m))
    prev = np.mean(y * y, axis=1)
    # rises below this are rounding noise around an interpolating solution
    slack = 1e-12 * np.maximum(prev, 1e-300)
    rising = np.zeros(n, dtype=np.int64)
    for _ in range(steps):
        resid = np.matmul(K, a[:, :, None])[:, :, 0] - y
        loss = np.mean(resid * resid, axis=1)
        rising = np.where(loss > prev * (1 + 1e-9) + slack, rising + 1, 0)
        if np.any(rising >= patience):
            raise Diverged(f"local GD loss increased {patience} steps in a row for some user")
        prev = loss
        a -= (lr * (2.0 / m))[:, None] * resid
    W = np.matmul(np.swapaxes(X, 1, 2), a[:, :, None])[:, :, 0]
    risk = None
    if model is not None:
        risk = excess_population_risk(np.eye(d), W, model)
    return W, risk

"""Hot per-client kernels, numba-compiled with a pure-numpy fallback.

Each public kernel dispatches to ``_<name>_nb`` (numba) or ``_<name>_np``
(numpy) according to :data:`privrep._backend.USE_NUMBA`. Both variants are
importable directly so tests and ``benchmarks/`` can compare them.
"""

from __future__ import annotations

import numpy as np

from ._backend import HAS_NUMBA, USE_NUMBA

if HAS_NUMBA:
    from numba import njit
else:  # pragma: no cover

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


COND_MAX = 1e12


# -- Private FedRep client step ----------------------------------------------


def _client_round_np(U, Xh, yh, Xg, yg, cond_max=COND_MAX):
    n, b, _ = Xh.shape
    k = U.shape[1]
    A = np.einsum("nbd,dk->nbk", Xh, U)
    heads = np.zeros((n, k))
    fallback = np.ones(n, dtype=bool)
    if b >= k:
        G = np.einsum("nbk,nbl->nkl", A, A)
        rhs = np.einsum("nbk,nb->nk", A, yh)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.linalg.cond(G)
        ok = np.isfinite(cond) & (cond < cond_max)
        if ok.any():
            heads[ok] = np.linalg.solve(G[ok], rhs[ok][..., None])[..., 0]
        fallback = ~ok
    if fallback.any():
        heads[fallback] = (np.linalg.pinv(A[fallback]) @ yh[fallback][..., None])[..., 0]
    w = heads @ U.T
    resid = np.einsum("nbd,nd->nb", Xg, w) - yg
    g = np.einsum("nbd,nb->nd", Xg, resid) * (2.0 / Xg.shape[1])
    grads = g[:, :, None] * heads[:, None, :]
    return heads, grads, fallback


@njit(cache=True, nogil=True)
def _client_round_nb(U, Xh, yh, Xg, yg, cond_max=COND_MAX):
    n, b, d = Xh.shape
    k = U.shape[1]
    bg = Xg.shape[1]
    heads = np.zeros((n, k))
    grads = np.empty((n, d, k))
    fallback = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        A = Xh[i] @ U
        y = yh[i]
        solved = False
        if b >= k:
            G = A.T @ A
            c = np.linalg.cond(G)
            if np.isfinite(c) and c < cond_max:
                heads[i] = np.linalg.solve(G, A.T @ y)
                solved = True
        if not solved:
            heads[i] = np.linalg.pinv(A) @ y
            fallback[i] = True
        w = U @ heads[i]
        resid = Xg[i] @ w - yg[i]
        g = (Xg[i].T @ resid) * (2.0 / bg)
        for a in range(d):
            for c2 in range(k):
                grads[i, a, c2] = g[a] * heads[i, c2]
    return heads, grads, fallback


def client_round(U, Xh, yh, Xg, yg, cond_max=COND_MAX):
    """Head solve on ``(Xh, yh)`` then embedding gradient on ``(Xg, yg)`` for every user.

    Returns ``(heads (n, k), grads (n, d, k), fallback (n,) bool)`` where
    ``fallback`` marks users whose head came from the minimum-norm
    pseudoinverse instead of the normal equations.
    """
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (U, Xh, yh, Xg, yg)]
    if USE_NUMBA:
        return _client_round_nb(*args, float(cond_max))
    return _client_round_np(*args, cond_max)


# -- private init statistic ----------------------------------------------------


def _init_accumulate_np(X, y, psi, chunk=1024):
    n, mp, d = X.shape
    acc = np.zeros((d, d))
    norms = np.empty(n)
    scale = 1.0 / (mp * (mp - 1))
    for lo in range(0, n, chunk):
        Xc, yc = X[lo : lo + chunk], y[lo : lo + chunk]
        s = np.einsum("cjd,cj->cd", Xc, yc)
        Z = s[:, :, None] * s[:, None, :] - np.einsum("cj,cjd,cje->cde", yc * yc, Xc, Xc)
        Z *= scale
        nrm = np.sqrt(np.einsum("cde,cde->c", Z, Z))
        norms[lo : lo + chunk] = nrm
        f = np.ones_like(nrm)
        big = nrm > psi
        f[big] = psi / nrm[big]
        acc += np.einsum("c,cde->de", f, Z)
    return acc, norms


@njit(cache=True, nogil=True)
def _init_accumulate_nb(X, y, psi):
    n, mp, d = X.shape
    acc = np.zeros((d, d))
    norms = np.empty(n)
    scale = 1.0 / (mp * (mp - 1))
    for i in range(n):
        Xi = X[i]
        yi = y[i]
        C = np.outer(yi, yi)
        for j in range(mp):
            C[j, j] = 0.0
        C *= scale
        K = Xi @ Xi.T
        CK = C @ K
        nrm2 = 0.0
        for a in range(mp):
            for b in range(mp):
                nrm2 += CK[a, b] * CK[b, a]
        nrm = np.sqrt(max(nrm2, 0.0))
        norms[i] = nrm
        f = 1.0
        if nrm > psi:
            f = psi / nrm
        acc += f * (Xi.T @ (C @ Xi))
    return acc, norms


def init_accumulate(X, y, psi=np.inf):
    """Sum over users of ``clip(Z_i, psi)`` together with every ``||Z_i||_F``.

    ``Z_i = (s s^T - sum_j y_j^2 x_j x_j^T) / (m'(m'-1))`` with
    ``s = sum_j y_j x_j``, i.e. the average of ``y_a y_b x_a x_b^T`` over
    ordered pairs ``a != b`` of the user's ``m'`` samples.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.shape[1] < 2:
        raise ValueError("need at least two samples per user")
    if USE_NUMBA:
        return _init_accumulate_nb(X, y, float(psi))
    return _init_accumulate_np(X, y, float(psi))


# -- margin-loss head search ---------------------------------------------------


def _margin_1d_np(S, rho, Gamma, chunk=64):
    C, n, m = S.shape
    out = np.empty((C, n))
    for lo in range(0, C, chunk):
        s = S[lo : lo + chunk]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(s != 0.0, rho / s, Gamma)
        t = np.clip(t, -Gamma, Gamma)
        ends = np.broadcast_to(np.array([-Gamma, Gamma]), s.shape[:-1] + (2,))
        pts = np.sort(np.concatenate([t, ends], axis=-1), axis=-1)
        cand = np.concatenate([0.5 * (pts[..., 1:] + pts[..., :-1]), ends], axis=-1)
        lost = (s[..., None, :] * cand[..., :, None] <= rho).sum(axis=-1)
        out[lo : lo + chunk] = lost.min(axis=-1) / m
    return out


@njit(cache=True, nogil=True)
def _margin_1d_nb(S, rho, Gamma):
    C, n, m = S.shape
    out = np.empty((C, n))
    pts = np.empty(m + 2)
    for c in range(C):
        for i in range(n):
            s = S[c, i]
            cnt = 0
            for j in range(m):
                if s[j] != 0.0:
                    t = rho / s[j]
                    if -Gamma < t < Gamma:
                        pts[cnt] = t
                        cnt += 1
            pts[cnt] = -Gamma
            pts[cnt + 1] = Gamma
            cnt += 2
            p = np.sort(pts[:cnt])
            best = m
            for q in range(cnt + 1):
                if q < cnt - 1:
                    v = 0.5 * (p[q] + p[q + 1])
                elif q == cnt - 1:
                    v = -Gamma
                else:
                    v = Gamma
                lost = 0
                for j in range(m):
                    if s[j] * v <= rho:
                        lost += 1
                if lost < best:
                    best = lost
            out[c, i] = best / m
    return out


def margin_min_loss_1d(S, rho, Gamma):
    """Exact ``min_{|v| <= Gamma} mean(S * v <= rho)`` for every ``(cover, user)`` row.

    ``S[c, i, j] = y_ij * <M x_ij, U_c>`` for a one-column embedding. The
    loss is piecewise constant in ``v`` with jumps at ``rho / S``; a
    breakpoint is never strictly better than an adjacent open interval, so
    interval midpoints plus the two endpoints suffice.
    """
    S = np.ascontiguousarray(S, dtype=np.float64)
    if USE_NUMBA:
        return _margin_1d_nb(S, float(rho), float(Gamma))
    return _margin_1d_np(S, float(rho), float(Gamma))


def _margin_grid_np(F, grid, rho, chunk=16):
    C, n, m, _ = F.shape
    out = np.empty((C, n))
    for lo in range(0, C, chunk):
        scores = np.einsum("cimk,gk->cigm", F[lo : lo + chunk], grid)
        out[lo : lo + chunk] = (scores <= rho).sum(axis=-1).min(axis=-1) / m
    return out


@njit(cache=True, nogil=True)
def _margin_grid_nb(F, grid, rho):
    C, n, m, k = F.shape
    G = grid.shape[0]
    out = np.empty((C, n))
    for c in range(C):
        for i in range(n):
            best = m
            for g in range(G):
                lost = 0
                for j in range(m):
                    acc = 0.0
                    for a in range(k):
                        acc += F[c, i, j, a] * grid[g, a]
                    if acc <= rho:
                        lost += 1
                if lost < best:
                    best = lost
            out[c, i] = best / m
    return out


def margin_min_loss_grid(F, grid, rho):
    """``min_g mean(F @ grid[g] <= rho)`` per ``(cover, user)``; ``F`` is label-signed."""
    F = np.ascontiguousarray(F, dtype=np.float64)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    if USE_NUMBA:
        return _margin_grid_nb(F, grid, float(rho))
    return _margin_grid_np(F, grid, float(rho))


# -- deterministic reduction -------------------------------------------------------


def pairwise_sum(A: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with a fixed balanced tree (order independent of threading)."""
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] == 0:
        return np.zeros(A.shape[1:])
    while A.shape[0] > 1:
        if A.shape[0] % 2:
            A = np.concatenate([A, np.zeros((1,) + A.shape[1:])], axis=0)
        A = A[0::2] + A[1::2]
    return A[0].copy()

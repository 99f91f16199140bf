"""Hot Monte-Carlo kernels: exhaustive ML search and the OAMP iteration.

Both kernels exist twice: a numba @njit version and a pure-numpy twin.
The active backend is chosen at import time from the MIMOFLOW_BACKEND
environment variable: "auto" (default: numba when importable), "numba",
or "numpy". `benchmarks/bench_kernels.py` times the two side by side.

Conventions shared by both backends:
  * candidate sign vectors are enumerated lexicographically with -1 < +1
    and the first component most significant, so the first argmin is the
    lexicographically smallest tie;
  * OAMP runs the de-correlated LMMSE / tanh-posterior loop and records
    per-iteration traces of (x_hat, r, tau2).
"""

from __future__ import annotations

import os
from functools import lru_cache

import numpy as np

_ENV_FLAG = "MIMOFLOW_BACKEND"

VAR_FLOOR = 1e-12  # clamp for tau^2 / v^2 inside OAMP


# --------------------------------------------------------------------------
# pure-numpy implementations
# --------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _sign_candidates(n: int) -> np.ndarray:
    """All 2^n sign vectors, lexicographic rows (-1 before +1, MSB first)."""
    idx = np.arange(1 << n, dtype=np.uint32)
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint32)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return 2.0 * bits - 1.0


def ml_search_batch_numpy(Y: np.ndarray, H: np.ndarray, a: float) -> np.ndarray:
    """Exhaustive min ||y - a H s||^2 per frame; returns signs (F, n)."""
    F, m = Y.shape
    n = H.shape[2]
    S = _sign_candidates(n)
    out = np.empty((F, n))
    for f in range(F):
        G = (a * S) @ H[f].T          # (2^n, m)
        d = G - Y[f][None, :]
        metrics = np.einsum("cm,cm->c", d, d)
        out[f] = S[int(np.argmin(metrics))]
    return out


def oamp_batch_numpy(
    Y: np.ndarray,
    H: np.ndarray,
    sigma2: np.ndarray,
    a: float,
    iters: int,
    damping: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """OAMP over a stack of frames.

    Returns traces (iters, F, n) for x_hat and r, (iters, F) for tau2,
    plus the number of variance-floor clamps applied.
    """
    F, m = Y.shape
    n = H.shape[2]
    xh_tr = np.empty((iters, F, n))
    r_tr = np.empty((iters, F, n))
    tau_tr = np.empty((iters, F))
    clamps = 0
    eye_m = np.eye(m)
    eye_n = np.eye(n)
    for f in range(F):
        Hf = H[f]
        yf = Y[f]
        s2 = float(sigma2[f])
        trH2 = float(np.sum(Hf * Hf))
        xhat = np.zeros(n)
        v2 = a * a
        for it in range(iters):
            G = v2 * (Hf @ Hf.T) + s2 * eye_m
            What = v2 * (Hf.T @ np.linalg.inv(G))
            WH = What @ Hf
            W = (n / np.trace(WH)) * What
            r = xhat + W @ (yf - Hf @ xhat)
            B = eye_n - (n / np.trace(WH)) * WH
            tau2 = (np.sum(B * B) * v2 + np.sum(W * W) * s2) / n
            if tau2 < VAR_FLOOR:
                tau2 = VAR_FLOOR
                clamps += 1
            post = a * np.tanh(a * r / tau2)
            xhat = (1.0 - damping) * post + damping * xhat
            res = yf - Hf @ xhat
            v2 = (res @ res - m * s2) / trH2
            if v2 < VAR_FLOOR:
                v2 = VAR_FLOOR
                clamps += 1
            xh_tr[it, f] = xhat
            r_tr[it, f] = r
            tau_tr[it, f] = tau2
    return xh_tr, r_tr, tau_tr, clamps


# --------------------------------------------------------------------------
# numba implementations (same math, loop-level)
# --------------------------------------------------------------------------

def adam_update_numpy(p, g, m, v, b1, b2, c1, c2, lr, eps):
    """Bias-corrected Adam update, in place on flat arrays."""
    m += (1.0 - b1) * (g - m)
    v += (1.0 - b2) * (g * g - v)
    denom = np.sqrt(v / c2)
    denom += eps
    p -= (lr / c1) * m / denom


def _build_numba():
    from numba import njit, prange

    @njit(cache=True, fastmath=True, parallel=True)
    def _adam_update(p, g, m, v, b1, b2, c1, c2, lr, eps):
        a1 = 1.0 - b1
        a2 = 1.0 - b2
        inv_sc2 = 1.0 / np.sqrt(c2)
        lr1 = lr / c1
        for i in prange(p.size):
            gi = g[i]
            mi = m[i] + a1 * (gi - m[i])
            vi = v[i] + a2 * (gi * gi - v[i])
            m[i] = mi
            v[i] = vi
            p[i] -= lr1 * mi / (np.sqrt(vi) * inv_sc2 + eps)

    @njit(cache=True)
    def _ml_search_batch(Y, H, a):
        F, m = Y.shape
        n = H.shape[2]
        out = np.empty((F, n))
        ncand = 1 << n
        for f in range(F):
            best = np.inf
            best_idx = 0
            for idx in range(ncand):
                d2 = 0.0
                for i in range(m):
                    acc = Y[f, i]
                    for j in range(n):
                        if (idx >> (n - 1 - j)) & 1:
                            acc -= a * H[f, i, j]
                        else:
                            acc += a * H[f, i, j]
                    d2 += acc * acc
                if d2 < best:
                    best = d2
                    best_idx = idx
            for j in range(n):
                out[f, j] = 1.0 if (best_idx >> (n - 1 - j)) & 1 else -1.0
        return out

    @njit(cache=True)
    def _oamp_batch(Y, H, sigma2, a, iters, damping):
        F, m = Y.shape
        n = H.shape[2]
        xh_tr = np.empty((iters, F, n))
        r_tr = np.empty((iters, F, n))
        tau_tr = np.empty((iters, F))
        clamps = 0
        eye_m = np.eye(m)
        eye_n = np.eye(n)
        for f in range(F):
            Hf = H[f]
            yf = Y[f]
            s2 = sigma2[f]
            trH2 = np.sum(Hf * Hf)
            xhat = np.zeros(n)
            v2 = a * a
            for it in range(iters):
                G = v2 * (Hf @ Hf.T) + s2 * eye_m
                What = v2 * (Hf.T @ np.linalg.inv(G))
                WH = What @ Hf
                trWH = 0.0
                for j in range(n):
                    trWH += WH[j, j]
                W = (n / trWH) * What
                r = xhat + W @ (yf - Hf @ xhat)
                B = eye_n - (n / trWH) * WH
                tau2 = (np.sum(B * B) * v2 + np.sum(W * W) * s2) / n
                if tau2 < VAR_FLOOR:
                    tau2 = VAR_FLOOR
                    clamps += 1
                post = a * np.tanh(a * r / tau2)
                xhat = (1.0 - damping) * post + damping * xhat
                res = yf - Hf @ xhat
                v2 = (res @ res - m * s2) / trH2
                if v2 < VAR_FLOOR:
                    v2 = VAR_FLOOR
                    clamps += 1
                xh_tr[it, f] = xhat
                r_tr[it, f] = r
                tau_tr[it, f] = tau2
        return xh_tr, r_tr, tau_tr, clamps

    return _ml_search_batch, _oamp_batch, _adam_update


def _select_backend() -> tuple[str, object, object, object]:
    choice = os.environ.get(_ENV_FLAG, "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{_ENV_FLAG} must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy", ml_search_batch_numpy, oamp_batch_numpy, adam_update_numpy
    try:
        ml_nb, oamp_nb, adam_nb = _build_numba()
        return "numba", ml_nb, oamp_nb, adam_nb
    except ImportError:
        if choice == "numba":
            raise
        return "numpy", ml_search_batch_numpy, oamp_batch_numpy, adam_update_numpy


BACKEND, ml_search_batch, oamp_batch, adam_update = _select_backend()


def backend_name() -> str:
    return BACKEND


def lmmse_batch(Y: np.ndarray, H: np.ndarray, a: float, sigma2: np.ndarray) -> np.ndarray:
    """Batched x_hat = a^2 H^T (a^2 H H^T + sigma2 I)^{-1} y, shape (F, n).

    One stacked LAPACK solve; already BLAS-bound, so no numba twin.
    """
    F, m = Y.shape
    G = (a * a) * (H @ np.swapaxes(H, 1, 2))
    G[:, np.arange(m), np.arange(m)] += sigma2[:, None]
    z = np.linalg.solve(G, Y[..., None])[..., 0]
    return (a * a) * np.einsum("fji,fj->fi", H, z)

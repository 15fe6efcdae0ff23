"""Hot numeric kernels: additive-angular-margin cross-entropy, UIR entropy
loss and the safe-pair cosine penalty.

Each kernel exists twice, a vectorized numpy version and a numba ``@njit``
loop version. The public names dispatch to numba unless the environment sets
``ARL_NUMBA=0`` (or numba is not importable); the flag is read once at import.

All kernels work on precomputed cosines so the matrix products stay in BLAS;
they return per-row losses and ``dL/dcos`` so callers can chain gradients to
features (``G @ W.T``) and to weight columns (``F.T @ G``).
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

# floor on sin(theta) in the target-logit derivative; only reached when a
# feature coincides with its own weight column (fresh unlabeled registration)
SIN_FLOOR = 1e-6


def _numba_requested() -> bool:
    return os.environ.get("ARL_NUMBA", "1").strip().lower() not in {"0", "false", "no", "off"}


USE_NUMBA = numba is not None and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy reference implementations


def margin_ce_numpy(cos, targets, mask, s, m):
    cos = np.asarray(cos, dtype=np.float64)
    B, C = cos.shape
    rows = np.arange(B)
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    if B == 0:
        return np.zeros(0), np.zeros((0, C))
    c = np.clip(cos, -1.0, 1.0)
    ct = c[rows, targets]
    sin_t = np.sqrt(np.maximum((1.0 - ct) * (1.0 + ct), 0.0))
    cos_m, sin_m = math.cos(m), math.sin(m)

    z = s * c
    z[rows, targets] = s * (ct * cos_m - sin_t * sin_m)
    z = np.where(mask, z, -np.inf)
    zt = z[rows, targets]
    zmax = z.max(axis=1)
    ex = np.exp(z - zmax[:, None])
    total = ex.sum(axis=1)

    losses = np.empty(B)
    top = zt >= zmax
    if np.any(top):
        rest = np.exp(z[top] - zt[top, None])
        rest[np.arange(rest.shape[0]), targets[top]] = 0.0
        losses[top] = np.log1p(rest.sum(axis=1))
    low = ~top
    losses[low] = zmax[low] - zt[low] + np.log(total[low])

    p = ex / total[:, None]
    dz = p
    # p_t - 1 as minus the other probabilities: no cancellation when p_t ~ 1
    others = ex.copy()
    others[rows, targets] = 0.0
    dz[rows, targets] = -others.sum(axis=1) / total
    dzdc = np.full((B, C), float(s))
    dzdc[rows, targets] = s * (cos_m + ct * sin_m / np.maximum(sin_t, SIN_FLOOR))
    return losses, dz * dzdc


def uir_numpy(cos, s):
    """Per-row ``-sum_i log p_i`` over all columns, ``p = softmax(s * cos)``."""
    cos = np.asarray(cos, dtype=np.float64)
    B, N = cos.shape
    z = s * np.clip(cos, -1.0, 1.0)
    zmax = z.max(axis=1) if N else np.zeros(B)
    ex = np.exp(z - zmax[:, None])
    total = ex.sum(axis=1)
    lse = zmax + np.log(total)
    losses = N * lse - z.sum(axis=1)
    p = ex / total[:, None]
    return losses, s * (N * p - 1.0)


def pair_penalty_numpy(x, t):
    """Mean squared cosine over unordered pairs with cosine strictly in (0, t).

    Returns ``(value, grad wrt raw rows of x, n_pairs)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    grad = np.zeros_like(x)
    if n < 2:
        return 0.0, grad, 0
    norms = np.linalg.norm(x, axis=1)
    f = x / norms[:, None]
    c = f @ f.T
    sel = np.triu((c > 0.0) & (c < t), k=1)
    n_t = int(sel.sum())
    if n_t == 0:
        return 0.0, grad, 0
    value = float((c[sel] ** 2).sum() / n_t)
    coef = np.where(sel | sel.T, 2.0 * c / n_t, 0.0)
    df = coef @ f
    grad = (df - np.sum(df * f, axis=1)[:, None] * f) / norms[:, None]
    return value, grad, n_t


# ---------------------------------------------------------------------------
# numba implementations

if numba is not None:

    @numba.njit(cache=True)
    def margin_ce_numba(cos, targets, mask, s, m):
        B, C = cos.shape
        losses = np.zeros(B)
        grad = np.zeros((B, C))
        z = np.empty(C)
        ex = np.empty(C)
        cos_m = math.cos(m)
        sin_m = math.sin(m)
        for b in range(B):
            t = targets[b]
            ct = min(1.0, max(-1.0, cos[b, t]))
            sin_t = math.sqrt(max((1.0 - ct) * (1.0 + ct), 0.0))
            zmax = -np.inf
            for j in range(C):
                if mask[b, j]:
                    if j == t:
                        z[j] = s * (ct * cos_m - sin_t * sin_m)
                    else:
                        z[j] = s * min(1.0, max(-1.0, cos[b, j]))
                    if z[j] > zmax:
                        zmax = z[j]
            # non-target mass summed on its own: total - ex[t] cancels when p_t ~ 1
            rest = 0.0
            for j in range(C):
                if mask[b, j]:
                    ex[j] = math.exp(z[j] - zmax)
                    if j != t:
                        rest += ex[j]
            zt = z[t]
            total = rest + ex[t]
            if zt >= zmax:
                losses[b] = math.log1p(rest)
            else:
                losses[b] = zmax - zt + math.log(total)
            dzdc_t = s * (cos_m + ct * sin_m / max(sin_t, SIN_FLOOR))
            for j in range(C):
                if mask[b, j] and j != t:
                    grad[b, j] = s * ex[j] / total
            grad[b, t] = -(rest / total) * dzdc_t
        return losses, grad

    @numba.njit(cache=True)
    def uir_numba(cos, s):
        B, N = cos.shape
        losses = np.zeros(B)
        grad = np.zeros((B, N))
        z = np.empty(N)
        for b in range(B):
            zmax = -np.inf
            zsum = 0.0
            for j in range(N):
                z[j] = s * min(1.0, max(-1.0, cos[b, j]))
                zsum += z[j]
                if z[j] > zmax:
                    zmax = z[j]
            total = 0.0
            for j in range(N):
                z[j] = math.exp(z[j] - zmax)
                total += z[j]
            losses[b] = N * (zmax + math.log(total)) - zsum
            for j in range(N):
                grad[b, j] = s * (N * z[j] / total - 1.0)
        return losses, grad

    @numba.njit(cache=True)
    def pair_penalty_numba(x, t):
        n, d = x.shape
        grad = np.zeros((n, d))
        if n < 2:
            return 0.0, grad, 0
        f = np.empty((n, d))
        norms = np.empty(n)
        for i in range(n):
            acc = 0.0
            for k in range(d):
                acc += x[i, k] * x[i, k]
            norms[i] = math.sqrt(acc)
            for k in range(d):
                f[i, k] = x[i, k] / norms[i]
        df = np.zeros((n, d))
        total = 0.0
        n_t = 0
        for i in range(n):
            for j in range(i + 1, n):
                c = 0.0
                for k in range(d):
                    c += f[i, k] * f[j, k]
                if 0.0 < c < t:
                    n_t += 1
                    total += c * c
                    for k in range(d):
                        df[i, k] += 2.0 * c * f[j, k]
                        df[j, k] += 2.0 * c * f[i, k]
        if n_t == 0:
            return 0.0, grad, 0
        for i in range(n):
            radial = 0.0
            for k in range(d):
                radial += df[i, k] * f[i, k]
            for k in range(d):
                grad[i, k] = (df[i, k] - radial * f[i, k]) / (norms[i] * n_t)
        return total / n_t, grad, n_t

else:  # pragma: no cover
    margin_ce_numba = uir_numba = pair_penalty_numba = None


def margin_ce(cos, targets, mask, s, m):
    """Per-row ArcFace cross-entropy restricted to ``mask`` columns.

    The target logit is ``s*cos(theta_t + m)`` computed as
    ``cos*cos(m) - sin*sin(m)``; every other active column contributes
    ``s*cos``. When the target holds the largest logit the loss is evaluated
    as ``log1p(sum exp(z_j - z_t))`` so tiny losses keep full relative
    precision.
    """
    if USE_NUMBA:
        return margin_ce_numba(
            np.ascontiguousarray(cos, dtype=np.float64),
            np.ascontiguousarray(targets, dtype=np.int64),
            np.ascontiguousarray(mask, dtype=np.bool_),
            float(s),
            float(m),
        )
    return margin_ce_numpy(cos, targets, mask, s, m)


def uir(cos, s):
    if USE_NUMBA:
        return uir_numba(np.ascontiguousarray(cos, dtype=np.float64), float(s))
    return uir_numpy(cos, s)


def pair_penalty(x, t):
    if USE_NUMBA:
        value, grad, n_t = pair_penalty_numba(np.ascontiguousarray(x, dtype=np.float64), float(t))
        return float(value), grad, int(n_t)
    return pair_penalty_numpy(x, t)

"""Pure numpy implementations of the hot kernels.

Signatures and semantics match ``_kernels.pyx`` exactly; results agree to
rounding.
"""

import numpy as np

_LOG_2PI = np.log(2.0 * np.pi)
_BLOCK = 8192


def gmm_accumulate(X, weights, means, variances):
    """Log-likelihood sum and posterior-weighted centered statistics.

    Returns ``(loglik, S0, S1, S2)`` with ``S0[k] = sum_i g_ik``,
    ``S1[k] = sum_i g_ik (x_i - mu_k)`` and ``S2[k] = sum_i g_ik (x_i - mu_k)**2``.
    """
    X = np.asarray(X, dtype=np.float64)
    n, dim = X.shape
    K = weights.shape[0]
    ivar = 1.0 / variances
    lognorm = np.log(weights) - 0.5 * (dim * _LOG_2PI + np.log(variances).sum(axis=1))
    S0 = np.zeros(K)
    S1 = np.zeros((K, dim))
    S2 = np.zeros((K, dim))
    total = 0.0
    for start in range(0, n, _BLOCK):
        xb = X[start:start + _BLOCK]
        diff = xb[:, None, :] - means[None, :, :]
        sq = diff * diff
        lj = lognorm[None, :] - 0.5 * np.einsum("nkd,kd->nk", sq, ivar)
        mx = lj.max(axis=1, keepdims=True)
        e = np.exp(lj - mx)
        s = e.sum(axis=1, keepdims=True)
        total += float(np.sum(mx[:, 0] + np.log(s[:, 0])))
        g = e / s
        S0 += g.sum(axis=0)
        S1 += np.einsum("nk,nkd->kd", g, diff)
        S2 += np.einsum("nk,nkd->kd", g, sq)
    return total, S0, S1, S2


def dual_cd_epoch(X, y, alpha, w, qdiag, C, order):
    """One pass of dual coordinate descent for the L1-loss linear SVM.

    Updates ``alpha`` and ``w`` in place and returns the extreme projected
    gradients seen during the pass.
    """
    pg_max = -np.inf
    pg_min = np.inf
    for i in order:
        xi = X[i]
        yi = y[i]
        G = yi * float(xi @ w) - 1.0
        a = alpha[i]
        if a == 0.0:
            PG = min(G, 0.0)
        elif a == C:
            PG = max(G, 0.0)
        else:
            PG = G
        if PG > pg_max:
            pg_max = PG
        if PG < pg_min:
            pg_min = PG
        if abs(PG) > 1e-12:
            a_new = min(max(a - G / qdiag[i], 0.0), C)
            alpha[i] = a_new
            w += ((a_new - a) * yi) * xi
    return pg_max, pg_min


def dual_cd_epoch_shrink(X, y, alpha, w, qdiag, C, order, active, pg_max_old, pg_min_old):
    """``dual_cd_epoch`` with shrinking.

    A coordinate at a bound whose gradient points further past the bound
    than last epoch's extreme projected gradients is marked inactive
    (``active[i] = 0``) and skipped.  Returns the extremes over the
    coordinates still active.
    """
    pg_max = -np.inf
    pg_min = np.inf
    for i in order:
        xi = X[i]
        yi = y[i]
        G = yi * float(xi @ w) - 1.0
        a = alpha[i]
        PG = 0.0
        if a == 0.0:
            if G > pg_max_old:
                active[i] = 0
                continue
            if G < 0.0:
                PG = G
        elif a == C:
            if G < pg_min_old:
                active[i] = 0
                continue
            if G > 0.0:
                PG = G
        else:
            PG = G
        if PG > pg_max:
            pg_max = PG
        if PG < pg_min:
            pg_min = PG
        if abs(PG) > 1e-12:
            a_new = min(max(a - G / qdiag[i], 0.0), C)
            alpha[i] = a_new
            w += ((a_new - a) * yi) * xi
    return pg_max, pg_min

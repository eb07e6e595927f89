"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from the ``LMTP_NUMBA`` env var:
``1`` (default) JIT-compiles the kernels with numba when it is importable,
``0`` keeps the plain numpy implementations. Both backends share the same
function bodies, so results agree to floating-point noise; tests pin the
agreement and ``benchmarks/bench_kernels.py`` compares speed.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "logistic_irls",
    "newton_tilt",
    "eg_simplex",
    "group_weighted_sums",
]


def _logistic_irls(X, y, w, max_iter, tol):
    """Weighted quasi-binomial IRLS with logit link.

    Accepts fractional targets in [0, 1]. Returns (beta, deviance, n_iter).
    X must already contain the intercept column. Stops when the deviance
    change falls below tol (relative) or at max_iter; the caller decides
    whether a max_iter stop is an error (it is not, for separable data).
    """
    n, p = X.shape
    beta = np.zeros(p)
    dev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        mu = np.minimum(np.maximum(mu, 1e-12), 1.0 - 1e-12)
        sw = w * mu * (1.0 - mu)
        z = eta + (y - mu) / (mu * (1.0 - mu))
        xtw = X.T * sw
        hess = xtw @ X
        for k in range(p):
            hess[k, k] += 1e-10
        beta = np.linalg.solve(hess, xtw @ z)
        new_dev = -2.0 * np.sum(w * (y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))
        if np.abs(dev - new_dev) < tol * (np.abs(new_dev) + 0.1):
            dev = new_dev
            break
        dev = new_dev
    return beta, dev, it


def _newton_tilt(pseudo, offset, w, tol, max_iter):
    """Solve the one-parameter logistic tilt score for its intercept.

    Finds eps with sum_i w_i (pseudo_i - expit(eps + offset_i)) = 0 by Newton
    steps, falling back to bisection on [-10, 10] when Newton stalls. Returns
    (eps, |score|/n, status) with status 0 = solved, 1 = |eps| escaped 10,
    2 = no sign change on [-10, 10].
    """
    n = pseudo.shape[0]
    eps = 0.0
    for _ in range(max_iter):
        mu = 1.0 / (1.0 + np.exp(-(eps + offset)))
        score = np.sum(w * (pseudo - mu))
        if np.abs(score) / n <= tol:
            return eps, np.abs(score) / n, 0
        hess = np.sum(w * mu * (1.0 - mu))
        if hess <= 0.0:
            break
        step = score / hess
        if step > 1.0:
            step = 1.0
        elif step < -1.0:
            step = -1.0
        eps = eps + step
        if np.abs(eps) > 10.0:
            break
    # bisection fallback: the score is strictly decreasing in eps
    lo = -10.0
    hi = 10.0
    mu = 1.0 / (1.0 + np.exp(-(lo + offset)))
    s_lo = np.sum(w * (pseudo - mu))
    mu = 1.0 / (1.0 + np.exp(-(hi + offset)))
    s_hi = np.sum(w * (pseudo - mu))
    if s_lo < 0.0 or s_hi > 0.0:
        status = 2
        if s_lo < 0.0:
            eps = lo
        else:
            eps = hi
        mu = 1.0 / (1.0 + np.exp(-(eps + offset)))
        return eps, np.abs(np.sum(w * (pseudo - mu))) / n, status
    for _ in range(200):
        eps = 0.5 * (lo + hi)
        mu = 1.0 / (1.0 + np.exp(-(eps + offset)))
        score = np.sum(w * (pseudo - mu))
        if np.abs(score) / n <= tol:
            return eps, np.abs(score) / n, 0
        if score > 0.0:
            lo = eps
        else:
            hi = eps
    mu = 1.0 / (1.0 + np.exp(-(eps + offset)))
    score = np.sum(w * (pseudo - mu))
    st = 0
    if np.abs(score) / n > tol:
        st = 1
    return eps, np.abs(score) / n, st


def _eg_simplex(preds, y, loss_code, n_iter, step):
    """Exponentiated-gradient descent for convex stacking weights.

    preds is the (n, K) out-of-fold prediction matrix, loss_code 0 is squared
    loss and 1 is log loss (preds then holds probabilities). Returns simplex
    weights of length K.
    """
    n, k = preds.shape
    w = np.full(k, 1.0 / k)
    for _ in range(n_iter):
        p = preds @ w
        if loss_code == 0:
            grad = 2.0 * (preds.T @ (p - y)) / n
        else:
            pc = np.minimum(np.maximum(p, 1e-10), 1.0 - 1e-10)
            grad = preds.T @ ((pc - y) / (pc * (1.0 - pc))) / n
        w = w * np.exp(-step * grad)
        total = np.sum(w)
        if total <= 0.0 or not np.isfinite(total):
            w = np.full(k, 1.0 / k)
        else:
            w = w / total
    return w


def _group_weighted_sums(codes, y, w, n_cells):
    """Per-cell weighted target sums and weight totals.

    codes holds a cell index in [0, n_cells) per row. Returns (sum of w*y,
    sum of w) per cell; callers turn these into cell means/frequencies.
    """
    wy = np.zeros(n_cells)
    ww = np.zeros(n_cells)
    for i in range(codes.shape[0]):
        c = codes[i]
        wy[c] += w[i] * y[i]
        ww[c] += w[i]
    return wy, ww


def _group_weighted_sums_np(codes, y, w, n_cells):
    wy = np.bincount(codes, weights=w * y, minlength=n_cells)
    ww = np.bincount(codes, weights=w, minlength=n_cells)
    return wy, ww


def _want_numba() -> bool:
    flag = os.environ.get("LMTP_NUMBA", "1").strip()
    return flag not in ("0", "false", "no", "off")


BACKEND = "numpy"
logistic_irls = _logistic_irls
newton_tilt = _newton_tilt
eg_simplex = _eg_simplex
group_weighted_sums = _group_weighted_sums_np

if _want_numba():
    try:
        import numba

        _jit = numba.njit(cache=True, nogil=True)
        logistic_irls = _jit(_logistic_irls)
        newton_tilt = _jit(_newton_tilt)
        eg_simplex = _jit(_eg_simplex)
        group_weighted_sums = _jit(_group_weighted_sums)
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

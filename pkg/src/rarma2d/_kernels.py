"""Compiled causal sweeps.

Every kernel walks the grid row-major, so each referenced neighbor
``[n - i, m - j]`` is final before it is read. Cells with ``n < w`` or
``m < w`` (0-based) are border cells: MA errors and eta-derivatives are zero
there and eta is left as NaN.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def latents(gy, beta, ar, phi, ma, theta, w):
    n_rows, n_cols = gy.shape
    eta = np.full((n_rows, n_cols), np.nan)
    err = np.zeros((n_rows, n_cols))
    for n in range(w, n_rows):
        for m in range(w, n_cols):
            acc = beta
            for a in range(ar.shape[0]):
                acc += phi[a] * gy[n - ar[a, 0], m - ar[a, 1]]
            for b in range(ma.shape[0]):
                acc += theta[b] * err[n - ma[b, 0], m - ma[b, 1]]
            eta[n, m] = acc
            err[n, m] = gy[n, m] - acc
    return eta, err


def latents_reference(gy, beta, ar, phi, ma, theta, w):
    """Plain nested-loop twin of :func:`latents` (same summation order)."""
    n_rows, n_cols = len(gy), len(gy[0])
    eta = [[float("nan")] * n_cols for _ in range(n_rows)]
    err = [[0.0] * n_cols for _ in range(n_rows)]
    for n in range(w, n_rows):
        for m in range(w, n_cols):
            acc = float(beta)
            for (i, j), c in zip(ar, phi):
                acc += float(c) * float(gy[n - i][m - j])
            for (k, l), c in zip(ma, theta):
                acc += float(c) * err[n - k][m - l]
            eta[n][m] = acc
            err[n][m] = float(gy[n][m]) - acc
    return np.array(eta), np.array(err)


@njit(cache=True, nogil=True)
def eta_gradients(gy, err, ar, ma, theta, w):
    """Derivatives of eta w.r.t. (beta, phi, theta), shape ``(kappa, N, M)``."""
    n_rows, n_cols = gy.shape
    n_ar = ar.shape[0]
    n_ma = ma.shape[0]
    kappa = 1 + n_ar + n_ma
    d = np.zeros((kappa, n_rows, n_cols))
    for n in range(w, n_rows):
        for m in range(w, n_cols):
            d[0, n, m] = 1.0
            for a in range(n_ar):
                d[1 + a, n, m] = gy[n - ar[a, 0], m - ar[a, 1]]
            for b in range(n_ma):
                d[1 + n_ar + b, n, m] = err[n - ma[b, 0], m - ma[b, 1]]
            for s in range(n_ma):
                c = theta[s]
                if c == 0.0:
                    continue
                ns = n - ma[s, 0]
                ms = m - ma[s, 1]
                for r in range(kappa):
                    d[r, n, m] -= c * d[r, ns, ms]
    return d


@njit(cache=True, nogil=True)
def simulate_log(z, beta, ar, phi, ma, theta, w):
    """Inversion-method sweep for the log link.

    ``z`` holds unit-mean Rayleigh draws; the pixel is ``mu * z``.
    """
    n_rows, n_cols = z.shape
    y = np.empty((n_rows, n_cols))
    gy = np.empty((n_rows, n_cols))
    err = np.zeros((n_rows, n_cols))
    mu0 = np.exp(beta)
    for n in range(n_rows):
        for m in range(n_cols):
            if n < w or m < w:
                y[n, m] = mu0 * z[n, m]
                gy[n, m] = np.log(y[n, m])
                continue
            acc = beta
            for a in range(ar.shape[0]):
                acc += phi[a] * gy[n - ar[a, 0], m - ar[a, 1]]
            for b in range(ma.shape[0]):
                acc += theta[b] * err[n - ma[b, 0], m - ma[b, 1]]
            y[n, m] = np.exp(acc) * z[n, m]
            gy[n, m] = np.log(y[n, m])
            err[n, m] = gy[n, m] - acc
    return y

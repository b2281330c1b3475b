"""Normal and chi-square distribution kernels used by inference and residuals."""

import numpy as np
from scipy import special

__all__ = ["chi2_cdf", "chi2_quantile", "chi2_sf", "std_normal_cdf", "std_normal_quantile"]


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def std_normal_cdf(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("x must not be NaN")
    return _out(special.ndtr(x))


def std_normal_quantile(u):
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("u must lie in (0, 1)")
    return _out(special.ndtri(u))


def _check_nu(nu):
    if int(nu) != nu or nu < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {nu}")
    return int(nu)


def chi2_quantile(prob, nu):
    """Inverse chi-square CDF via the inverse regularized lower incomplete gamma."""
    nu = _check_nu(nu)
    prob = np.asarray(prob, dtype=float)
    if np.any(~((prob > 0) & (prob < 1))):
        raise ValueError("prob must lie in (0, 1)")
    return _out(2.0 * special.gammaincinv(nu / 2.0, prob))


def chi2_cdf(x, nu):
    nu = _check_nu(nu)
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return _out(special.gammainc(nu / 2.0, x / 2.0))


def chi2_sf(x, nu):
    """Upper tail ``1 - CDF``, computed directly to keep small p-values accurate."""
    nu = _check_nu(nu)
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return _out(special.gammaincc(nu / 2.0, x / 2.0))

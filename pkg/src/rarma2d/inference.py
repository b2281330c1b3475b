"""Expected information, Wald tests, confidence intervals and information criteria."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from rarma2d.specfun import chi2_quantile, chi2_sf, std_normal_quantile

__all__ = [
    "ConfidenceIntervals",
    "InferenceError",
    "WaldReport",
    "confidence_intervals",
    "fisher_info",
    "information_criteria",
    "information_from",
    "invert_information",
    "overall_subset",
    "wald_test",
]

log = logging.getLogger(__name__)

COND_WARN = 1e10


class InferenceError(ArithmeticError):
    """The information matrix (or a partition of its inverse) is singular."""


def information_from(latents, d, spec):
    """Gram form ``J^T W J`` over interior cells.

    ``W = (4 / mu^2) (dmu/deta)^2``; ``J`` stacks the eta-derivatives.
    """
    w = latents.w
    mu = latents.mu[w:, w:].ravel()
    weight = 4.0 / mu**2 * spec.link_fn.dmu_deta(mu) ** 2
    jac = d[:, w:, w:].reshape(d.shape[0], -1)
    info = (jac * weight) @ jac.T
    return 0.5 * (info + info.T)


def fisher_info(y, spec, gamma):
    """Conditional expected information at ``gamma``."""
    from rarma2d.estimation import _gamma, _gradients
    from rarma2d.model import recurse_latents

    gamma = _gamma(spec, gamma)
    gy = spec.link_fn.apply(np.asarray(y, dtype=float))
    lat = recurse_latents(gy, spec, gamma, transformed=True)
    return information_from(lat, _gradients(gy, lat, spec, gamma), spec)


def invert_information(info):
    """Inverse of a symmetric positive definite information matrix.

    Raises :class:`InferenceError` when the Cholesky factorization fails.
    """
    info = np.asarray(info, dtype=float)
    try:
        factor = linalg.cho_factor(info, lower=True)
    except linalg.LinAlgError as exc:
        raise InferenceError("information matrix is not positive definite") from exc
    cond = np.linalg.cond(info)
    if cond > COND_WARN:
        log.warning("information matrix is ill-conditioned (cond=%.3g)", cond)
    inv = linalg.cho_solve(factor, np.eye(info.shape[0]))
    return 0.5 * (inv + inv.T)


def overall_subset(spec):
    """Indices of all autoregressive and moving-average coefficients."""
    return list(range(1, spec.n_params))


@dataclass(frozen=True)
class WaldReport:
    statistic: float
    df: int
    threshold: float
    p_value: float
    reject: bool
    pfa: float


def _estimate_and_info(fit):
    if hasattr(fit, "gamma"):
        return fit.params, fit.fisher
    estimate, info = fit
    return np.asarray(estimate, dtype=float), np.asarray(info, dtype=float)


def wald_test(fit, subset, gamma0=None, pfa=0.05):
    """Wald test of ``gamma[subset] == gamma0``.

    ``fit`` is a :class:`~rarma2d.estimation.FitResult` or an
    ``(estimate, information)`` pair. The weighting matrix is the inverse of
    the ``subset`` rows/columns of the inverse information.
    """
    estimate, info = _estimate_and_info(fit)
    subset = list(subset)
    if not subset:
        raise ValueError("subset must be nonempty")
    gamma0 = np.zeros(len(subset)) if gamma0 is None else np.asarray(gamma0, float).reshape(-1)
    if gamma0.size != len(subset):
        raise ValueError("gamma0 must match the subset length")
    cov = invert_information(info)
    block = cov[np.ix_(subset, subset)]
    diff = estimate[subset] - gamma0
    try:
        stat = float(diff @ linalg.solve(block, diff, assume_a="pos"))
    except linalg.LinAlgError as exc:
        raise InferenceError("interest block of the inverse information is singular") from exc
    nu = len(subset)
    threshold = chi2_quantile(1.0 - pfa, nu)
    stat = max(stat, 0.0)
    return WaldReport(stat, nu, threshold, chi2_sf(stat, nu), stat > threshold, pfa)


@dataclass(frozen=True)
class ConfidenceIntervals:
    names: list
    estimate: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return (self.lower <= truth) & (truth <= self.upper)

    def rows(self):
        return [
            dict(name=n, estimate=float(e), se=float(s), lower=float(lo), upper=float(hi))
            for n, e, s, lo, hi in zip(self.names, self.estimate, self.se, self.lower, self.upper)
        ]


def confidence_intervals(fit, alpha=0.05, names=None):
    """Symmetric Wald intervals with level ``1 - alpha``."""
    estimate, info = _estimate_and_info(fit)
    if names is None:
        names = fit.spec.param_names if hasattr(fit, "spec") else [f"g{i}" for i in range(len(estimate))]
    se = np.sqrt(np.diag(invert_information(info)))
    z = std_normal_quantile(1.0 - alpha / 2.0)
    return ConfidenceIntervals(list(names), estimate, se, estimate - z * se, estimate + z * se,
                               1.0 - alpha)


def information_criteria(fit, n_rows=None, n_cols=None):
    """Return ``(AIC, SIC)`` with ``kappa = (p+1)^2 + (q+1)^2 - 1``."""
    if n_rows is None or n_cols is None:
        n_rows, n_cols = fit.shape
    kappa = fit.spec.n_params
    aic = -2.0 * fit.loglik + 2.0 * kappa
    sic = -2.0 * fit.loglik + kappa * math.log(n_rows * n_cols)
    return aic, sic

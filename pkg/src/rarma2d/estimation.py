"""Conditional maximum likelihood estimation of 2-D RARMA models."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from rarma2d import _kernels
from rarma2d.model import (
    InsufficientDataError,
    LatentGrids,
    ModelSpec,
    ParamVector,
    as_grid,
    fitted_image,
    lag_arrays,
    recurse_latents,
)

__all__ = [
    "EtaGradientState",
    "FitOptions",
    "FitResult",
    "conditional_loglik",
    "eta_gradients",
    "fit_cmle",
    "initial_values",
    "score",
]

log = logging.getLogger(__name__)

_LOG_HALF_PI = math.log(math.pi / 2.0)


@dataclass(frozen=True)
class EtaGradientState:
    """``d[r, n, m]`` is the derivative of ``eta[n, m]`` w.r.t. the r-th parameter."""

    d: np.ndarray
    spec: ModelSpec

    @property
    def beta(self):
        return self.d[0]

    @property
    def phi(self):
        return self.d[1 : 1 + self.spec.n_ar]

    @property
    def theta(self):
        return self.d[1 + self.spec.n_ar :]


def _gamma(spec, gamma):
    if isinstance(gamma, ParamVector):
        return gamma.check(spec)
    return ParamVector.from_array(spec, gamma)


def _cell_loglik(y, mu):
    return _LOG_HALF_PI + np.log(y) - 2.0 * np.log(mu) - np.pi * y**2 / (4.0 * mu**2)


def _loglik_from_latents(y, lat):
    w = lat.w
    yi, mu = y[w:, w:], lat.mu[w:, w:]
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        return -np.inf
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ll = float(np.sum(_cell_loglik(yi, mu)))
    return ll if math.isfinite(ll) else -np.inf


def conditional_loglik(y, spec, gamma):
    """Log-likelihood conditional on the first ``w`` rows and columns.

    Returns ``-inf`` when the recursion produces a nonfinite or zero mean.
    """
    y = np.asarray(y, dtype=float)
    gamma = _gamma(spec, gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        lat = recurse_latents(y, spec, gamma)
    return _loglik_from_latents(y, lat)


def _gradients(gy, lat, spec, gamma):
    ar, ma = lag_arrays(spec)
    return _kernels.eta_gradients(gy, lat.err, ar, ma, gamma.theta, spec.w)


def eta_gradients(y, spec, gamma):
    """Recursive derivatives of the linear predictor, zero-seeded on the border."""
    y = np.asarray(y, dtype=float)
    gamma = _gamma(spec, gamma)
    gy = spec.link_fn.apply(y)
    lat = recurse_latents(gy, spec, gamma, transformed=True)
    return EtaGradientState(_gradients(gy, lat, spec, gamma), spec)


def _score_from(y, lat, d, spec):
    w = lat.w
    yi, mu = y[w:, w:], lat.mu[w:, w:]
    dl_dmu = np.pi * yi**2 / (2.0 * mu**3) - 2.0 / mu
    weight = dl_dmu * spec.link_fn.dmu_deta(mu)
    return np.einsum("rnm,nm->r", d[:, w:, w:], weight)


def score(y, spec, gamma):
    """Analytic gradient of :func:`conditional_loglik`."""
    y = np.asarray(y, dtype=float)
    gamma = _gamma(spec, gamma)
    gy = spec.link_fn.apply(y)
    lat = recurse_latents(gy, spec, gamma, transformed=True)
    return _score_from(y, lat, _gradients(gy, lat, spec, gamma), spec)


def initial_values(y, spec):
    """OLS start for ``beta`` and ``phi`` on the link scale; ``theta`` is zero.

    Falls back to ``beta = mean g(y)``, ``phi = 0`` (with a warning) when the
    lagged design is rank deficient.
    """
    y = np.asarray(y, dtype=float)
    gy = spec.link_fn.apply(y)
    n_rows, n_cols = gy.shape
    w = spec.w
    if n_rows <= w or n_cols <= w:
        raise InsufficientDataError(f"{n_rows}x{n_cols} grid too small for w={w}")
    response = gy[w:, w:].ravel()
    if response.size < 1 + spec.n_ar:
        raise InsufficientDataError(
            f"{response.size} interior cells for {1 + spec.n_ar} regressors"
        )
    columns = [np.ones_like(response)]
    columns += [gy[w - i : n_rows - i, w - j : n_cols - j].ravel() for i, j in spec.ar_lags]
    design = np.column_stack(columns)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        warnings.warn("rank-deficient OLS design; starting from beta = mean g(y), phi = 0",
                      stacklevel=2)
        return ParamVector(response.mean(), np.zeros(spec.n_ar), np.zeros(spec.n_ma))
    coef, *_ = np.linalg.lstsq(design, response, rcond=None)
    return ParamVector(coef[0], coef[1:], np.zeros(spec.n_ma))


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6  # on max |score| / interior-cell count
    step_tol: float = 1e-10
    armijo: float = 1e-4
    max_backtracks: int = 60


@dataclass
class FitResult:
    spec: ModelSpec
    gamma: ParamVector
    loglik: float
    score: np.ndarray
    score_norm: float
    fisher: np.ndarray
    latents: LatentGrids
    converged: bool
    iterations: int
    message: str
    shape: tuple
    history: list = field(default_factory=list, repr=False)

    @property
    def params(self):
        return self.gamma.to_array()

    @property
    def n_cells(self):
        w = self.spec.w
        return (self.shape[0] - w) * (self.shape[1] - w)

    @property
    def mu_hat(self):
        return fitted_image(self.latents)


class _Objective:
    """Negative log-likelihood with cached latents for the last evaluated point."""

    def __init__(self, y, spec):
        self.y = y
        self.spec = spec
        self.gy = spec.link_fn.apply(y)

    def value(self, x):
        gamma = ParamVector.from_array(self.spec, x)
        with np.errstate(over="ignore", invalid="ignore"):
            lat = recurse_latents(self.gy, self.spec, gamma, transformed=True)
        return -_loglik_from_latents(self.y, lat), lat

    def gradient(self, x, lat):
        gamma = ParamVector.from_array(self.spec, x)
        d = _gradients(self.gy, lat, self.spec, gamma)
        return -_score_from(self.y, lat, d, self.spec), d


def _inverse_or_none(matrix):
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        return None
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol


def fit_cmle(y, spec, options=None, start=None):
    """Maximize the conditional log-likelihood by BFGS with analytic score.

    The inverse-Hessian approximation starts from the inverse expected
    information at the starting point. Steps are accepted by backtracking on
    the Armijo condition; points with a nonfinite likelihood are rejected.
    """
    from rarma2d.inference import information_from

    options = options or FitOptions()
    y = as_grid(y)
    n_cells = (y.shape[0] - spec.w) * (y.shape[1] - spec.w)
    x0 = initial_values(y, spec) if start is None else _gamma(spec, start)
    x = x0.to_array()
    obj = _Objective(y, spec)

    f, lat = obj.value(x)
    if not math.isfinite(f):
        # OLS start outside the region where the recursion is finite
        x = ParamVector(np.mean(obj.gy[spec.w:, spec.w:]), np.zeros(spec.n_ar),
                        np.zeros(spec.n_ma)).to_array()
        f, lat = obj.value(x)
    g, d = obj.gradient(x, lat)

    def fresh_inverse(lat, d):
        info = information_from(lat, d, spec)
        h = _inverse_or_none(info)
        if h is None:
            h = np.eye(x.size) / max(np.max(np.abs(g)), 1.0)
        return h

    h = fresh_inverse(lat, d)
    history = [-f]
    converged, message, it = False, "maximum iterations reached", 0
    for it in range(1, options.max_iter + 1):
        if np.max(np.abs(g)) / n_cells <= options.grad_tol:
            converged, message, it = True, "score tolerance reached", it - 1
            break
        direction = -h @ g
        slope = g @ direction
        if not slope < 0:
            h = fresh_inverse(lat, d)
            direction = -h @ g
            slope = g @ direction
        step = 1.0
        for _ in range(options.max_backtracks):
            x_new = x + step * direction
            f_new, lat_new = obj.value(x_new)
            if math.isfinite(f_new) and f_new <= f + options.armijo * step * slope:
                break
            step *= 0.5
        else:
            message = "line search failed"
            break
        g_new, d = obj.gradient(x_new, lat_new)
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(yv):
            rho = 1.0 / sy
            hy = h @ yv
            h = h + ((sy + yv @ hy) * rho**2) * np.outer(s, s) - rho * (
                np.outer(hy, s) + np.outer(s, hy)
            )
        x, f, g, lat = x_new, f_new, g_new, lat_new
        history.append(-f)
        if np.linalg.norm(s) <= options.step_tol * max(1.0, np.linalg.norm(x)):
            converged, message = True, "step tolerance reached"
            break
    else:
        it = options.max_iter
        if np.max(np.abs(g)) / n_cells <= options.grad_tol:
            converged, message = True, "score tolerance reached"

    gamma = ParamVector.from_array(spec, x)
    fisher = information_from(lat, d, spec)
    u = -g
    log.debug("fit RARMA(%d,%d): %s after %d iterations", spec.p, spec.q, message, it)
    return FitResult(
        spec=spec,
        gamma=gamma,
        loglik=-f,
        score=u,
        score_norm=float(np.max(np.abs(u)) / n_cells),
        fisher=fisher,
        latents=lat,
        converged=converged,
        iterations=it,
        message=message,
        shape=y.shape,
        history=history,
    )

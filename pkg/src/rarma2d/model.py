"""Rayleigh distribution (mean parametrization), links and the 2-D RARMA recursion.

Indexing convention
-------------------
Grids are stored 0-based as ``(rows, cols)`` numpy arrays. The 1-based math
cell ``[n, m]`` lives at ``grid[n - 1, m - 1]``. With ``w = max(p, q)`` the
interior (cells with a fitted mean) is ``grid[w:, w:]``; the first ``w`` rows
and columns form the border, whose MA errors are zero and whose means are
undefined (stored as NaN).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from rarma2d import _kernels

__all__ = [
    "AMPLITUDE_FLOOR",
    "LatentGrids",
    "LogLink",
    "ModelSpec",
    "ParamVector",
    "as_grid",
    "fitted_image",
    "get_link",
    "mean_variance",
    "rayleigh_cdf",
    "rayleigh_pdf",
    "rayleigh_quantile",
    "recurse_latents",
]

AMPLITUDE_FLOOR = 1e-10


class InsufficientDataError(ValueError):
    """Raised when a grid is too small for the requested model order."""


# ---------------------------------------------------------------------------
# Rayleigh distribution
# ---------------------------------------------------------------------------


def _check_positive(name, x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError(f"{name} must be strictly positive")
    return x


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def rayleigh_pdf(y, mu):
    """Density of a Rayleigh variable with mean ``mu`` evaluated at ``y``."""
    y = _check_positive("y", y)
    mu = _check_positive("mu", mu)
    return _out(np.pi * y / (2.0 * mu**2) * np.exp(-np.pi * y**2 / (4.0 * mu**2)))


def rayleigh_cdf(y, mu):
    """Distribution function ``1 - exp(-pi y^2 / (4 mu^2))``."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= 0)):
        raise ValueError("y must be nonnegative")
    mu = _check_positive("mu", mu)
    return _out(-np.expm1(-np.pi * y**2 / (4.0 * mu**2)))


def rayleigh_quantile(u, mu):
    """Inverse of :func:`rayleigh_cdf` in ``y``; used for inversion sampling."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u >= 0) & (u < 1))):
        raise ValueError("u must lie in [0, 1)")
    mu = _check_positive("mu", mu)
    return _out(2.0 * mu / math.sqrt(math.pi) * np.sqrt(-np.log1p(-u)))


def mean_variance(mu):
    """Conditional mean and variance of a Rayleigh variable with mean ``mu``."""
    mu = _check_positive("mu", mu)
    return _out(mu), _out(mu**2 * (4.0 / np.pi - 1.0))


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------


class LogLink:
    """``g(x) = log x``."""

    name = "log"

    def apply(self, x):
        return _out(np.log(_check_positive("x", x)))

    def inverse(self, v):
        return _out(np.exp(np.asarray(v, dtype=float)))

    def deriv(self, x):
        return _out(1.0 / _check_positive("x", x))

    def dmu_deta(self, mu):
        # 1 / g'(mu); no domain check so it can run on fitted grids
        return np.asarray(mu, dtype=float)


_LINKS = {"log": LogLink()}


def get_link(name):
    try:
        return _LINKS[name]
    except KeyError:
        raise ValueError(f"unknown link {name!r}; available: {sorted(_LINKS)}") from None


# ---------------------------------------------------------------------------
# Model specification and parameters
# ---------------------------------------------------------------------------


def _lags(order):
    return [(i, j) for i in range(order + 1) for j in range(order + 1) if (i, j) != (0, 0)]


@dataclass(frozen=True)
class ModelSpec:
    """Orders of a 2-D RARMA(p, q) model and its link."""

    p: int
    q: int
    link: str = "log"

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("orders must be nonnegative")
        get_link(self.link)

    @property
    def w(self):
        return max(self.p, self.q)

    @cached_property
    def ar_lags(self):
        return _lags(self.p)

    @cached_property
    def ma_lags(self):
        return _lags(self.q)

    @property
    def n_ar(self):
        return (self.p + 1) ** 2 - 1

    @property
    def n_ma(self):
        return (self.q + 1) ** 2 - 1

    @property
    def n_params(self):
        return 1 + self.n_ar + self.n_ma

    @property
    def link_fn(self):
        return get_link(self.link)

    @property
    def param_names(self):
        return (
            ["beta"]
            + [f"phi({i},{j})" for i, j in self.ar_lags]
            + [f"theta({k},{l})" for k, l in self.ma_lags]
        )

    def transposed_index(self):
        """Permutation of the flat parameter vector under the ``(i,j) -> (j,i)`` relabeling."""
        ar = [self.ar_lags.index((j, i)) for i, j in self.ar_lags]
        ma = [self.ma_lags.index((j, i)) for i, j in self.ma_lags]
        return np.array([0] + [1 + a for a in ar] + [1 + self.n_ar + b for b in ma])


@dataclass(frozen=True)
class ParamVector:
    """``gamma = (beta, phi, theta)`` with lags in row-major order, (0,0) excluded."""

    beta: float
    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "phi", np.array(self.phi, dtype=float).reshape(-1))
        object.__setattr__(self, "theta", np.array(self.theta, dtype=float).reshape(-1))

    @classmethod
    def from_array(cls, spec, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != spec.n_params:
            raise ValueError(
                f"RARMA({spec.p},{spec.q}) needs {spec.n_params} parameters, got {values.size}"
            )
        return cls(values[0], values[1 : 1 + spec.n_ar], values[1 + spec.n_ar :])

    @classmethod
    def zeros(cls, spec, beta=0.0):
        return cls(beta, np.zeros(spec.n_ar), np.zeros(spec.n_ma))

    def to_array(self):
        return np.concatenate([[self.beta], self.phi, self.theta])

    def check(self, spec):
        if self.phi.size != spec.n_ar or self.theta.size != spec.n_ma:
            raise ValueError(
                f"RARMA({spec.p},{spec.q}) expects {spec.n_ar} phi and {spec.n_ma} theta "
                f"coefficients, got {self.phi.size} and {self.theta.size}"
            )
        return self

    def __len__(self):
        return 1 + self.phi.size + self.theta.size


def as_grid(values, floor=AMPLITUDE_FLOOR, warn=True):
    """Validate an amplitude image, clamping exact zeros to ``floor``.

    Returns a C-contiguous float64 copy. Negative or nonfinite values raise.
    """
    y = np.array(values, dtype=float, order="C")
    if y.ndim != 2 or y.size == 0:
        raise ValueError(f"expected a nonempty 2-D grid, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("grid contains nonfinite amplitudes")
    if np.any(y < 0):
        raise ValueError("grid contains negative amplitudes")
    zeros = y == 0
    n_zero = int(zeros.sum())
    if n_zero:
        y[zeros] = floor
        if warn:
            warnings.warn(f"{n_zero} zero amplitudes clamped to {floor:g}", stacklevel=2)
    return y


# ---------------------------------------------------------------------------
# Recursion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatentGrids:
    """Linear predictor, conditional mean and MA error grids.

    ``eta`` and ``mu`` are NaN on the border; ``err`` is zero there.
    """

    eta: np.ndarray
    mu: np.ndarray
    err: np.ndarray
    w: int

    @property
    def interior(self):
        return np.s_[self.w :, self.w :]


def _check_size(shape, spec):
    n, m = shape
    if n <= spec.w or m <= spec.w:
        raise InsufficientDataError(
            f"a {n}x{m} grid is too small for RARMA({spec.p},{spec.q}); "
            f"need at least {spec.w + 1}x{spec.w + 1}"
        )


def lag_arrays(spec):
    ar = np.array(spec.ar_lags, dtype=np.int64).reshape(-1, 2)
    ma = np.array(spec.ma_lags, dtype=np.int64).reshape(-1, 2)
    return ar, ma


def recurse_latents(y, spec, gamma, *, transformed=False):
    """Run the causal row-major sweep producing ``eta``, ``mu`` and ``err``.

    Parameters
    ----------
    y : array_like
        Amplitude grid, or ``g(y)`` when ``transformed`` is true.
    spec : ModelSpec
    gamma : ParamVector or array_like
    """
    if not isinstance(gamma, ParamVector):
        gamma = ParamVector.from_array(spec, gamma)
    gamma.check(spec)
    link = spec.link_fn
    gy = np.asarray(y, dtype=float) if transformed else link.apply(np.asarray(y, dtype=float))
    gy = np.ascontiguousarray(gy)
    _check_size(gy.shape, spec)
    ar, ma = lag_arrays(spec)
    eta, err = _kernels.latents(gy, gamma.beta, ar, gamma.phi, ma, gamma.theta, spec.w)
    with np.errstate(over="ignore"):
        mu = link.inverse(eta)
    return LatentGrids(eta=eta, mu=mu, err=err, w=spec.w)


def fitted_image(latents, spec=None):
    """Fitted means on the ``(N - w) x (M - w)`` interior."""
    w = latents.w if spec is None else spec.w
    return latents.mu[w:, w:].copy()

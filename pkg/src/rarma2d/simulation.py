"""Inversion-method simulation of 2-D RARMA fields and the Monte Carlo study."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from rarma2d import _kernels
from rarma2d.estimation import FitOptions, fit_cmle
from rarma2d.inference import InferenceError, confidence_intervals
from rarma2d.model import ModelSpec, ParamVector, lag_arrays, rayleigh_quantile

__all__ = [
    "SCENARIOS",
    "McSummary",
    "Scenario",
    "replication_rng",
    "run_monte_carlo",
    "simulate_field",
    "worker_count",
]

log = logging.getLogger(__name__)


def worker_count():
    """Parallelism cap from ``RARMA_THREADS`` (default: CPU count)."""
    env = os.environ.get("RARMA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring invalid RARMA_THREADS=%r", env)
    return os.cpu_count() or 1


def replication_rng(seed, replication, size=None):
    """Independent generator for one replication, reproducible from ``(seed, replication)``."""
    key = (replication,) if size is None else (replication, *size)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def simulate_field(spec, gamma, n_rows, n_cols, rng=None, burn_in=20):
    """Draw an ``n_rows x n_cols`` field by a causal row-major inversion sweep.

    Border cells (first ``w`` rows/columns of the generated frame) use mean
    ``g^{-1}(beta)`` and zero MA error. With ``burn_in > 0`` a larger frame is
    generated and its top/left ``burn_in`` rows and columns are discarded.
    """
    if spec.link != "log":
        raise NotImplementedError("simulation is implemented for the log link")
    if not isinstance(gamma, ParamVector):
        gamma = ParamVector.from_array(spec, gamma)
    gamma.check(spec)
    if n_rows <= spec.w or n_cols <= spec.w:
        raise ValueError(f"field must exceed {spec.w}x{spec.w}")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    burn_in = int(burn_in)
    u = rng.random((n_rows + burn_in, n_cols + burn_in))
    z = rayleigh_quantile(u, 1.0)
    ar, ma = lag_arrays(spec)
    y = _kernels.simulate_log(z, gamma.beta, ar, gamma.phi, ma, gamma.theta, spec.w)
    return np.ascontiguousarray(y[burn_in:, burn_in:])


@dataclass(frozen=True)
class Scenario:
    spec: ModelSpec
    gamma_true: ParamVector
    sizes: tuple = ((10, 10), (20, 20), (40, 40), (80, 80))
    replications: int = 1000
    seed: int = 20240101
    burn_in: int = 0
    alpha: float = 0.05

    def __post_init__(self):
        self.gamma_true.check(self.spec)


SCENARIOS = {
    "rarma10": Scenario(
        ModelSpec(1, 0),
        ParamVector(-0.2031, [0.4562, 0.4523, -0.1054], []),
    ),
    "rarma11": Scenario(
        ModelSpec(1, 1),
        ParamVector(0.3569, [0.2155, 0.2032, 0.1500], [0.1529, 0.1744, 0.1998]),
    ),
}


@dataclass
class SizeSummary:
    size: tuple
    names: list
    truth: np.ndarray
    estimates: np.ndarray  # (n_ok, kappa)
    covered: np.ndarray  # (n_ok, kappa) bool
    failures: int

    @property
    def mean(self):
        return self.estimates.mean(axis=0)

    @property
    def variance(self):
        return self.estimates.var(axis=0, ddof=1) if len(self.estimates) > 1 else np.zeros_like(self.truth)

    @property
    def rb(self):
        return 100.0 * (self.mean - self.truth) / self.truth

    @property
    def mse(self):
        return np.mean((self.estimates - self.truth) ** 2, axis=0)

    @property
    def cr(self):
        return self.covered.mean(axis=0)

    @property
    def total_abs_rb(self):
        return float(np.sum(np.abs(self.rb)))

    @property
    def total_mse(self):
        return float(np.sum(self.mse))


@dataclass
class McSummary:
    scenario: Scenario
    by_size: list = field(default_factory=list)

    @property
    def failures(self):
        return sum(s.failures for s in self.by_size)

    def to_csv(self):
        """CSV with one row per parameter and size, then totals."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["size", "measure", "true", "Mean", "RB(%)", "MSE", "CR", "n_ok", "failures"])
        for s in self.by_size:
            label = f"{s.size[0]}x{s.size[1]}"
            for k, name in enumerate(s.names):
                writer.writerow([label, name, _g(s.truth[k]), _g(s.mean[k]), _g(s.rb[k]),
                                 _g(s.mse[k]), _g(s.cr[k]), len(s.estimates), s.failures])
        for s in self.by_size:
            label = f"{s.size[0]}x{s.size[1]}"
            writer.writerow([label, "total_abs_RB(%)", "", _g(s.total_abs_rb), "", "", "", "", ""])
            writer.writerow([label, "total_MSE", "", _g(s.total_mse), "", "", "", "", ""])
        return buf.getvalue()


def _g(x):
    return f"{x:.6g}"


def _one_replication(scenario, size, r, options):
    rng = replication_rng(scenario.seed, r, size)
    y = simulate_field(scenario.spec, scenario.gamma_true, *size, rng=rng,
                       burn_in=scenario.burn_in)
    try:
        fit = fit_cmle(y, scenario.spec, options)
        if not fit.converged:
            return None
        ci = confidence_intervals(fit, scenario.alpha)
    except (InferenceError, ValueError, FloatingPointError) as exc:
        log.debug("replication %d at %s failed: %s", r, size, exc)
        return None
    return fit.params, ci.covers(scenario.gamma_true.to_array())


def run_monte_carlo(scenario, options=None, workers=None):
    """Simulate, fit and summarize every replication at every size.

    Replications are independent tasks; results are reduced in replication
    order so the summary does not depend on ``workers``.
    """
    options = options or FitOptions()
    workers = workers or worker_count()
    truth = scenario.gamma_true.to_array()
    summary = McSummary(scenario)
    for size in scenario.sizes:
        size = tuple(size)
        reps = range(scenario.replications)
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(lambda r: _one_replication(scenario, size, r, options), reps))
        else:
            results = [_one_replication(scenario, size, r, options) for r in reps]
        ok = [res for res in results if res is not None]
        kappa = truth.size
        est = np.array([res[0] for res in ok]).reshape(-1, kappa)
        cov = np.array([res[1] for res in ok], dtype=bool).reshape(-1, kappa)
        summary.by_size.append(
            SizeSummary(size, scenario.spec.param_names, truth, est, cov, len(results) - len(ok))
        )
        log.info("size %s: %d/%d replications converged", size, len(ok), len(results))
    return summary

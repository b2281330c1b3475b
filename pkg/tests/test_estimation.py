import math

import numpy as np
import pytest

from rarma2d.estimation import (
    FitOptions,
    conditional_loglik,
    eta_gradients,
    fit_cmle,
    initial_values,
    score,
)
from rarma2d.model import ModelSpec, ParamVector, recurse_latents
from rarma2d.simulation import SCENARIOS, replication_rng, simulate_field

LL_SINGLE = -0.333815458107993444889465615925  # log(pi/2) - pi/4


def fd_score(y, spec, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (conditional_loglik(y, spec, x + e) - conditional_loglik(y, spec, x - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))


def test_single_cell_loglik():
    spec = ModelSpec(0, 0)
    assert conditional_loglik(np.ones((1, 1)), spec, [0.0]) == pytest.approx(LL_SINGLE, rel=1e-14)


def test_beta_stationary_point(rng):
    spec = ModelSpec(0, 0)
    y = rng.uniform(0.1, 3.0, (7, 9))
    mu_star = math.sqrt(math.pi * np.sum(y**2) / (4 * y.size))
    beta = math.log(mu_star)
    assert abs(score(y, spec, [beta])[0]) <= 1e-10 * y.size
    ll = conditional_loglik(y, spec, [beta])
    assert ll > conditional_loglik(y, spec, [beta + 1e-3])
    assert ll > conditional_loglik(y, spec, [beta - 1e-3])


def test_nonfinite_recursion_gives_minus_inf(rng):
    spec = ModelSpec(0, 0)
    assert conditional_loglik(rng.uniform(1, 2, (3, 3)), spec, [1e5]) == -np.inf


class TestEtaGradients:
    def test_theta_zero_collapses(self, rng):
        spec = ModelSpec(1, 1)
        y = rng.uniform(0.3, 3, (6, 5))
        gamma = ParamVector(0.1, [0.2, 0.3, -0.1], [0, 0, 0])
        state = eta_gradients(y, spec, gamma)
        g = np.log(y)
        np.testing.assert_array_equal(state.beta[1:, 1:], 1.0)
        np.testing.assert_array_equal(state.phi[0][1:, 1:], g[1:, :-1])  # (0,1)
        np.testing.assert_array_equal(state.phi[1][1:, 1:], g[:-1, 1:])  # (1,0)
        np.testing.assert_array_equal(state.phi[2][1:, 1:], g[:-1, :-1])  # (1,1)
        assert np.all(state.d[:, 0, :] == 0) and np.all(state.d[:, :, 0] == 0)

    def test_against_finite_differences(self, rng, spec11, gamma11):
        y = simulate_field(spec11, gamma11, 15, 17, rng=rng, burn_in=0)
        state = eta_gradients(y, spec11, gamma11)
        x = gamma11.to_array()
        h = 1e-6
        for r in range(x.size):
            e = np.zeros_like(x)
            e[r] = h
            up = recurse_latents(y, spec11, x + e).eta
            down = recurse_latents(y, spec11, x - e).eta
            fd = ((up - down) / (2 * h))[1:, 1:]
            an = state.d[r, 1:, 1:]
            assert np.max(np.abs(an - fd)) / np.max(np.abs(fd)) <= 1e-5


def test_score_against_finite_differences(scenario):
    rng = np.random.default_rng(99)
    truth = scenario.gamma_true.to_array()
    for _ in range(5):
        y = simulate_field(scenario.spec, scenario.gamma_true, 30, 30, rng=rng, burn_in=0)
        x = truth + rng.uniform(-0.05, 0.05, truth.size)
        assert rel_err(score(y, scenario.spec, x), fd_score(y, scenario.spec, x)) <= 1e-5


def test_score_unbiased_at_truth(scenario):
    scores = np.array([
        score(simulate_field(scenario.spec, scenario.gamma_true, 40, 40,
                             rng=replication_rng(3, r), burn_in=0),
              scenario.spec, scenario.gamma_true)
        for r in range(200)
    ])
    se = scores.std(axis=0, ddof=1) / math.sqrt(len(scores))
    assert np.all(np.abs(scores.mean(axis=0)) <= 3 * se)


class TestInitialValues:
    def test_constant_field_fallback(self):
        spec = ModelSpec(1, 1)
        with pytest.warns(UserWarning, match="rank-deficient"):
            gamma = initial_values(np.full((10, 10), 2.5), spec)
        assert gamma.beta == pytest.approx(math.log(2.5))
        assert np.all(gamma.phi == 0) and np.all(gamma.theta == 0)

    def test_ar_sanity_band(self):
        sc = SCENARIOS["rarma10"]
        y = simulate_field(ModelSpec(1, 1), ParamVector(sc.gamma_true.beta, sc.gamma_true.phi,
                                                        [0, 0, 0]), 80, 80, rng=4)
        gamma = initial_values(y, ModelSpec(1, 1))
        np.testing.assert_allclose(gamma.phi, sc.gamma_true.phi, atol=0.1)
        assert np.all(gamma.theta == 0.0)


class TestFit:
    def test_closed_form_constant_mean(self, rng):
        spec = ModelSpec(0, 0)
        y = rng.rayleigh(1.3, (25, 30))
        fit = fit_cmle(y, spec, FitOptions(grad_tol=1e-12))
        mu_star = math.sqrt(math.pi * np.sum(y**2) / (4 * y.size))
        assert fit.converged
        assert math.exp(fit.gamma.beta) == pytest.approx(mu_star, rel=1e-8)

    def test_converges_with_ascent(self, scenario):
        y = simulate_field(scenario.spec, scenario.gamma_true, 40, 40, rng=5, burn_in=0)
        fit = fit_cmle(y, scenario.spec)
        assert fit.converged
        assert fit.score_norm <= FitOptions().grad_tol
        assert np.all(np.diff(fit.history) >= 0)
        np.testing.assert_allclose(fit.fisher, fit.fisher.T, atol=1e-10)
        assert np.all(np.linalg.eigvalsh(fit.fisher) > 0)

    def test_truth_start(self, scenario):
        y = simulate_field(scenario.spec, scenario.gamma_true, 40, 40, rng=6, burn_in=0)
        fit = fit_cmle(y, scenario.spec, start=scenario.gamma_true)
        assert fit.converged and fit.score_norm <= FitOptions().grad_tol

    def test_refit_is_idempotent(self, spec11, gamma11):
        y = simulate_field(spec11, gamma11, 40, 40, rng=7, burn_in=0)
        first = fit_cmle(y, spec11)
        again = fit_cmle(y, spec11, start=first.gamma)
        assert again.iterations <= 1
        np.testing.assert_allclose(again.params, first.params, atol=1e-6)

    def test_transpose_relabels_estimates(self, spec11, gamma11):
        y = simulate_field(spec11, gamma11, 30, 35, rng=8, burn_in=0)
        opts = FitOptions(grad_tol=1e-10)
        direct = fit_cmle(y, spec11, opts).params
        transposed = fit_cmle(y.T, spec11, opts).params
        np.testing.assert_allclose(transposed, direct[spec11.transposed_index()], atol=1e-6)

    def test_scale_equivariance(self, spec11, gamma11):
        y = simulate_field(spec11, gamma11, 20, 20, rng=9, burn_in=0)
        opts = FitOptions(grad_tol=1e-10)
        a = fit_cmle(y, spec11, opts)
        b = fit_cmle(2 * y, spec11, opts)
        np.testing.assert_allclose(b.params[1:], a.params[1:], atol=1e-6)
        shift = math.log(2) * (1 - a.gamma.phi.sum())
        assert b.gamma.beta == pytest.approx(a.gamma.beta + shift, abs=1e-6)

    def test_scale_shift_without_ar(self, rng):
        spec = ModelSpec(0, 0)
        y = rng.rayleigh(1.0, (20, 20))
        opts = FitOptions(grad_tol=1e-12)
        delta = fit_cmle(2 * y, spec, opts).gamma.beta - fit_cmle(y, spec, opts).gamma.beta
        assert delta == pytest.approx(math.log(2), abs=1e-9)

    def test_nonconvergence_is_flagged(self, spec11, gamma11):
        y = simulate_field(spec11, gamma11, 30, 30, rng=10, burn_in=0)
        fit = fit_cmle(y, spec11, FitOptions(max_iter=1))
        assert not fit.converged and fit.iterations == 1


@pytest.mark.slow
def test_reference_means_at_80(mc_rarma10_80):
    # published reference means at N = M = 80
    reference = np.array([-0.2043, 0.4560, 0.4516, -0.1052])
    np.testing.assert_allclose(mc_rarma10_80.mean, reference, atol=0.01)
    assert mc_rarma10_80.failures == 0

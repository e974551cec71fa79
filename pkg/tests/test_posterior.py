"""Tests for posterior inference, quadrature vs brute force vs sampling."""

import math

import numpy as np
import pytest

from dosefind.losses import Ewoc, Inverted, SquaredError, DesignCriterion
from dosefind.model import DoseSpace, NaturalParams, clipped_support, log_odds
from dosefind.posterior import (
    DegeneratePosteriorError,
    EtaMarginal,
    History,
    Prior,
    SampleDegeneracyWarning,
    WeightedSample,
    build_grid_posterior,
    draw_importance_sample,
    expected_loss,
    log_likelihood,
    marginal_eta,
    posterior_mean_eta,
    posterior_quantile_eta,
    predictive_dlt_prob,
    weighted_quantile,
)

SPACE = DoseSpace(140.0, 425.0)
P = 1.0 / 3.0
PRIOR = Prior.uniform(SPACE, P)
H5 = History.from_pairs([(211.25, 0), (262.0, 0), (305.0, 1), (281.0, 1), (255.0, 0)])


def rng_of(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


class RiemannOracle:
    """Dense midpoint-rule posterior on the clipped rectangle (independent of
    the production quadrature path)."""

    def __init__(self, history: History, n: int = 2001):
        rlo, rhi, elo, ehi = clipped_support(SPACE, P)
        # midpoint rule: cell centers
        re = np.linspace(rlo, rhi, n + 1)
        ee = np.linspace(elo, ehi, n + 1)
        self.rho = 0.5 * (re[1:] + re[:-1])
        self.eta = 0.5 * (ee[1:] + ee[:-1])
        R, E = np.meshgrid(self.rho, self.eta, indexing="ij")
        logl = np.zeros_like(R)
        for d, y in history.observations:
            z = log_odds(d, R, E, P, SPACE.x_min)
            f = 1.0 / (1.0 + np.exp(-z))
            logl += np.log(f) if y == 1 else np.log1p(-f)
        w = np.exp(logl - logl.max())
        self.w = w / w.sum()

    def mean_eta(self) -> float:
        return float((self.w.sum(axis=0) * self.eta).sum())

    def quantile_eta(self, q: float) -> float:
        marg = self.w.sum(axis=0)
        cdf = np.cumsum(marg) - 0.5 * marg  # mass centered at cell midpoints
        return float(np.interp(q, cdf / marg.sum(), self.eta))

    def mean_f_at(self, x: float) -> float:
        R, E = np.meshgrid(self.rho, self.eta, indexing="ij")
        z = log_odds(x, R, E, P, SPACE.x_min)
        return float((self.w / (1.0 + np.exp(-z))).sum())


class TestLogLikelihood:
    def test_empty_history(self):
        assert log_likelihood(History(), NaturalParams(0.1, 300.0, P), SPACE) == 0.0

    def test_single_obs_at_true_mtd(self):
        nat = NaturalParams(0.1, 300.0, P)
        h = History.from_pairs([(300.0, 1)])
        assert log_likelihood(h, nat, SPACE) == pytest.approx(math.log(P), abs=1e-12)

    def test_against_per_term_product_oracle(self):
        nat = NaturalParams(0.22, 250.0, P)
        h = History.from_pairs([(200.0, 0), (260.0, 1), (240.0, 0)])
        prod = 1.0
        for d, y in h.observations:
            z = log_odds(d, nat.rho, nat.eta, P, SPACE.x_min)
            f = 1.0 / (1.0 + math.exp(-z))
            prod *= f if y == 1 else (1.0 - f)
        assert log_likelihood(h, nat, SPACE) == pytest.approx(math.log(prod), abs=1e-12)


class TestGridPosterior:
    def test_empty_history_mean_and_quantiles(self):
        gp = build_grid_posterior(PRIOR, History())
        assert posterior_mean_eta(gp) == pytest.approx(282.5, abs=1e-3)
        assert posterior_quantile_eta(gp, 0.25) == pytest.approx(211.25, abs=1e-3)
        for w in (0.1, 0.5, 0.9):
            assert posterior_quantile_eta(gp, w) == pytest.approx(140 + w * 285, abs=1e-3)

    def test_masses_normalized(self):
        for h in (History(), H5):
            gp = build_grid_posterior(PRIOR, h)
            assert abs(gp.node_masses.sum() - 1.0) < 1e-10

    def test_zero_observations_equals_prior_on_grid(self):
        gp = build_grid_posterior(PRIOR, History())
        expected = PRIOR.log_density(gp.rho_nodes[:, None], gp.eta_nodes[None, :])
        assert np.allclose(gp.log_weights, expected)

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            build_grid_posterior(PRIOR, History(), (16, 128))

    def test_against_dense_riemann_oracle(self):
        oracle = RiemannOracle(H5)
        gp = build_grid_posterior(PRIOR, H5)
        assert posterior_mean_eta(gp) == pytest.approx(oracle.mean_eta(), rel=1e-4)
        assert posterior_quantile_eta(gp, 0.25) == pytest.approx(
            oracle.quantile_eta(0.25), rel=1e-4
        )
        assert posterior_quantile_eta(gp, 0.5) == pytest.approx(
            oracle.quantile_eta(0.5), rel=1e-4
        )

    def test_self_convergence(self):
        g128 = build_grid_posterior(PRIOR, H5, (128, 128))
        g256 = build_grid_posterior(PRIOR, H5, (256, 256))
        m128, m256 = posterior_mean_eta(g128), posterior_mean_eta(g256)
        assert abs(m256 - m128) / m256 < 1e-3

    def test_incremental_update_matches_rebuild(self):
        gp = build_grid_posterior(PRIOR, H5).updated(270.0, 1)
        rebuilt = build_grid_posterior(PRIOR, H5.append(270.0, 1))
        assert posterior_mean_eta(gp) == posterior_mean_eta(rebuilt)
        assert np.allclose(gp.log_weights, rebuilt.log_weights, atol=1e-10)

    def test_degenerate_posterior_error(self):
        # the normalizer must refuse a grid whose mass underflowed everywhere
        from dosefind.posterior import _normalize

        lw = np.full((64, 64), -np.inf)
        qw = np.full((64, 64), 1.0)
        with pytest.raises(DegeneratePosteriorError):
            _normalize(lw, qw)

    def test_extreme_history_stays_finite_in_log_space(self):
        # heavy contradictory data drives the log normalizer far down but the
        # log-space path keeps it finite and the masses normalized
        h = History.from_pairs([(425.0, 0)] * 2000 + [(140.0, 1)] * 2000)
        gp = build_grid_posterior(PRIOR, h, (64, 64))
        assert math.isfinite(gp.log_norm_const)
        assert abs(gp.node_masses.sum() - 1.0) < 1e-9

    def test_out_of_space_dose_rejected(self):
        with pytest.raises(ValueError):
            build_grid_posterior(PRIOR, History.from_pairs([(500.0, 0)]))


class TestMarginal:
    def test_integrates_to_one(self):
        marg = marginal_eta(build_grid_posterior(PRIOR, H5))
        assert np.sum(marg.weights * marg.density) == pytest.approx(1.0, abs=1e-8)
        assert np.all(marg.density >= 0)

    def test_quantile_cdf_inverse(self):
        marg = marginal_eta(build_grid_posterior(PRIOR, H5))
        for w in (0.05, 0.25, 0.5, 0.9):
            assert marg.cdf(marg.quantile(w)) == pytest.approx(w, abs=1e-10)

    def test_median_equals_mean_on_symmetric_marginal(self):
        nodes = np.linspace(150, 400, 101)
        dens = np.exp(-0.5 * ((nodes - 275) / 30) ** 2)
        weights = np.full(nodes.size, (400 - 150) / 101)
        dens /= np.sum(weights * dens)
        marg = EtaMarginal(nodes=nodes, density=dens, weights=weights, lo=150.0, hi=400.0)
        assert marg.quantile(0.5) == pytest.approx(marg.mean(), abs=1e-6)

    def test_density_on_grid(self):
        marg = marginal_eta(build_grid_posterior(PRIOR, History()))
        grid = SPACE.grid(200)
        d = marg.density_on(grid)
        assert d.shape == (200,)
        assert np.allclose(d, d[0])  # flat prior stays flat


class TestExpectedLoss:
    def point_mass(self, rho, eta):
        return WeightedSample(
            rho=np.array([rho]), eta=np.array([eta]), weights=np.array([1.0]),
            ess=1.0, space=SPACE, p=P,
        )

    def test_point_mass_ewoc_zero_at_eta(self):
        pm = self.point_mass(0.15, 300.0)
        assert expected_loss(pm, Ewoc(0.25), 300.0) == 0.0

    def test_point_mass_squared_error(self):
        pm = self.point_mass(0.15, 300.0)
        assert expected_loss(pm, SquaredError(), 260.0) == pytest.approx(1600.0)

    def test_design_criterion_rejected(self):
        gp = build_grid_posterior(PRIOR, History())
        with pytest.raises(TypeError):
            expected_loss(gp, DesignCriterion(), 250.0)

    def test_uniform_ewoc_against_monte_carlo(self):
        gp = build_grid_posterior(PRIOR, History())
        x = 282.5
        got = expected_loss(gp, Ewoc(0.25), x)
        rng = rng_of(99)
        eta = rng.uniform(*PRIOR.bounds[2:], 1_000_000)
        draws = 0.25 * np.maximum(eta - x, 0) + 0.75 * np.maximum(x - eta, 0)
        se = draws.std() / math.sqrt(draws.size)
        assert abs(got - draws.mean()) < 3 * se

    def test_inverted_loss_against_monte_carlo(self):
        gp = build_grid_posterior(PRIOR, H5)
        x = 250.0
        got = expected_loss(gp, Inverted(0.25), x)
        # oracle: importance sample and average the pointwise loss
        ws = draw_importance_sample(PRIOR, H5, 200_000, rng_of(5))
        z = log_odds(x, ws.rho, ws.eta, P, SPACE.x_min)
        f = 1.0 / (1.0 + np.exp(-z))
        vals = np.where(f <= P, 0.25 * (P - f), 0.75 * (f - P))
        est = float(np.sum(ws.weights * vals))
        se = math.sqrt(float(np.sum(ws.weights**2 * (vals - est) ** 2)))
        assert abs(got - est) < 3 * se + 1e-12


class TestImportanceSampling:
    def test_empty_history_uniform_weights(self):
        ws = draw_importance_sample(PRIOR, History(), 5000, rng_of(1))
        assert np.allclose(ws.weights, 1.0 / 5000)
        assert ws.ess == pytest.approx(5000.0, rel=1e-12)

    def test_particle_floor(self):
        with pytest.raises(ValueError):
            draw_importance_sample(PRIOR, History(), 100, rng_of(1))

    def test_mean_matches_grid(self):
        ws = draw_importance_sample(PRIOR, H5, 100_000, rng_of(2))
        grid_mean = posterior_mean_eta(build_grid_posterior(PRIOR, H5))
        est = posterior_mean_eta(ws)
        se = math.sqrt(float(np.sum(ws.weights**2 * (ws.eta - est) ** 2)))
        assert abs(est - grid_mean) < 3 * se

    def test_degeneracy_warning(self):
        doses = np.linspace(150, 420, 400)
        z = log_odds(doses, 0.05, 405.0, P, SPACE.x_min)
        ys = (1 / (1 + np.exp(-z)) > 0.5).astype(int)  # deterministic, very sharp
        h = History.from_pairs(zip(doses, (int(y) for y in ys)))
        with pytest.warns(SampleDegeneracyWarning):
            draw_importance_sample(PRIOR, h, 5000, rng_of(3))

    def test_weighted_quantile_midpoint(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        w = np.full(4, 0.25)
        assert weighted_quantile(v, w, 0.5) == pytest.approx(2.5)


class TestPredictive:
    def test_point_mass_at_truth(self):
        ws = WeightedSample(
            rho=np.array([0.15]), eta=np.array([320.0]), weights=np.array([1.0]),
            ess=1.0, space=SPACE, p=P,
        )
        assert predictive_dlt_prob(ws, 320.0) == pytest.approx(P, abs=1e-12)

    def test_uniform_prior_at_xmin(self):
        ws = draw_importance_sample(PRIOR, History(), 50_000, rng_of(4))
        # toxicity probability at the lowest dose is rho itself: mean ~ p/2
        assert predictive_dlt_prob(ws, SPACE.x_min) == pytest.approx(P / 2, abs=0.002)

    def test_grid_matches_oracle(self):
        gp = build_grid_posterior(PRIOR, H5)
        oracle = RiemannOracle(H5, n=801)
        for x in (180.0, 250.0, 320.0, 400.0):
            assert predictive_dlt_prob(gp, x) == pytest.approx(oracle.mean_f_at(x), abs=5e-4)


class TestPosteriorShiftDirection:
    def test_dlt_shifts_mean_down_nondlt_up(self):
        rng = rng_of(12)
        for _ in range(100):
            k = rng.integers(0, 6)
            pairs = [(rng.uniform(150, 420), int(rng.random() < 0.3)) for _ in range(k)]
            h = History.from_pairs(pairs)
            gp = build_grid_posterior(PRIOR, h, (64, 64))
            x = float(rng.uniform(150, 420))
            base = posterior_mean_eta(gp)
            assert posterior_mean_eta(gp.updated(x, 1)) <= base + 1e-9
            assert posterior_mean_eta(gp.updated(x, 0)) >= base - 1e-9


class TestBayesConsistency:
    def test_posterior_sd_shrinks_with_data(self):
        truth = NaturalParams(0.15, 290.0, P)
        meds = {}
        for n in (10, 50, 200):
            sds = []
            for seed in range(50):
                rng = rng_of((n, seed))
                doses = rng.uniform(160, 420, n)
                z = log_odds(doses, truth.rho, truth.eta, P, SPACE.x_min)
                ys = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(int)
                gp = build_grid_posterior(
                    PRIOR, History.from_pairs(zip(doses, ys)), (64, 64)
                )
                sds.append(marginal_eta(gp).sd())
            meds[n] = float(np.median(sds))
        assert meds[10] > meds[50] > meds[200]

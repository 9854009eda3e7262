import numpy as np
import pytest

from apcsim import (
    Dataset,
    FitConfig,
    GridSpec,
    InputDomainError,
    ModelKind,
    Posterior,
    artificial_effects,
    centering_indexes,
    generate_dataset,
    get_case,
    map_fit,
    mcmc_fit,
    rhat,
)
from apcsim.analysis import bias_s
from apcsim.datagen import table_indexes
from apcsim.inference import _adaptation_windows, _ModeJump
from apcsim.models import std_from_effects

KINDS = list(ModelKind)
QUICK = FitConfig(chains=4, iterations=1500, warmup=500, thin=2)


def case_data(cid, spec=None, seed=None):
    spec = spec or GridSpec(10, 10)
    beta = artificial_effects(get_case(cid), spec)
    return beta, generate_dataset(beta, spec, 1234 + cid if seed is None else seed)


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert (cfg.chains, cfg.iterations, cfg.warmup, cfg.thin, cfg.seed) == (4, 6000, 1000, 5, 1234)
        assert cfg.sigma_floor == 0.05 and cfg.rhat_threshold == 1.05 and cfg.restarts == 8

    @pytest.mark.parametrize(
        "kw",
        [
            dict(warmup=6000),
            dict(thin=0),
            dict(chains=0),
            dict(restarts=0),
            dict(method="vi"),
            dict(sampler="gibbs"),
            dict(sigma_floor=-1.0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(InputDomainError):
            FitConfig(**kw)


class TestRhat:
    def test_iid_chains(self):
        draws = np.random.default_rng(0).standard_normal((4, 1000))
        assert 1.0 <= rhat(draws) <= 1.01

    def test_disjoint_chains(self):
        rng = np.random.default_rng(1)
        draws = np.vstack([rng.standard_normal(500), 10 + rng.standard_normal(500)])
        assert rhat(draws) > 1.1

    def test_constant_chains(self):
        assert rhat(np.ones((4, 100))) == np.inf

    def test_trend_is_caught_by_splitting(self):
        # each chain drifts identically: unsplit R-hat would miss it
        t = np.linspace(0, 10, 400)
        rng = np.random.default_rng(2)
        draws = np.vstack([t + 0.1 * rng.standard_normal(400) for _ in range(4)])
        assert rhat(draws) > 1.5

    def test_oracle_formula(self):
        rng = np.random.default_rng(3)
        draws = rng.standard_normal((3, 9)) + np.array([[0.0], [0.3], [-0.2]])
        # independent evaluation: halves of floor(n / 2), middle draw dropped
        halves = [c[:4] for c in draws] + [c[5:] for c in draws]
        n = 4
        means = np.array([h.mean() for h in halves])
        W = np.mean([h.var(ddof=1) for h in halves])
        B = n * means.var(ddof=1)
        expected = np.sqrt(((n - 1) / n * W + B / n) / W)
        assert rhat(draws) == pytest.approx(max(expected, 1.0), rel=1e-12)

    @pytest.mark.parametrize("shape", [(1, 100), (4, 3), (10,)])
    def test_needs_enough_draws(self, shape):
        with pytest.raises(InputDomainError):
            rhat(np.zeros(shape))


def test_adaptation_windows():
    ends = _adaptation_windows(1000)
    assert ends[0] == 100 and ends[-1] == 950
    assert all(b > a for a, b in zip(ends, ends[1:]))
    assert _adaptation_windows(100) == []


def test_mode_jump_density_normalized():
    mj = _ModeJump([(np.zeros(2), np.eye(2)), (np.array([3.0, 0.0]), 0.25 * np.eye(2))])
    g = np.linspace(-12, 15, 541)
    X, Y = np.meshgrid(g, g)
    dens = np.exp([[mj.log_density(np.array([x, y])) for x, y in zip(rx, ry)] for rx, ry in zip(X, Y)])
    # unnormalized per component by the shared t constant; compare against the constant itself
    from scipy.special import gammaln

    d, nu = 2, mj.df
    log_c = gammaln((nu + d) / 2) - gammaln(nu / 2) - d / 2 * np.log(nu * np.pi)
    mass = dens.sum() * (g[1] - g[0]) ** 2 * np.exp(log_c)
    assert mass == pytest.approx(1.0, abs=0.02)


class TestMap:
    @pytest.mark.parametrize("kind", KINDS)
    def test_stationary_and_centered(self, kind, case8_data):
        _, data = case8_data
        res = map_fit(kind, data, FitConfig(method="map"))
        assert res.converged
        for blk in res.point.blocks:
            assert abs(blk.sum()) <= 1e-9
        assert res.diagnostics["marginal_grad_norm"] <= 1e-8 * (1 + abs(res.diagnostics["log_marginal_at_mode"]))
        assert res.sigma_hat == pytest.approx(0.1, rel=0.1)

    @pytest.mark.parametrize("kind", KINDS)
    def test_gradient_of_effects_vanishes(self, kind, case8_data):
        _, data = case8_data
        post = Posterior(kind, data)
        res = map_fit(kind, data, FitConfig(method="map"))
        x = _unconstrained(post, res)
        g = post.gradient(x)[: post.p + 1]
        assert np.linalg.norm(g) <= 1e-6 * (1 + abs(post.log_density(x)))
        assert post.log_density(x) == pytest.approx(res.log_posterior_at_point, rel=1e-9)

    @pytest.mark.parametrize("kind", KINDS)
    def test_gauge_moves_lower_the_posterior(self, kind, case8_data):
        _, data = case8_data
        post = Posterior(kind, data)
        res = map_fit(kind, data, FitConfig(method="map"))
        x = _unconstrained(post, res)
        base = post.log_density(x)
        effects = post.effects(x)
        sc, _ = post.scales(x[post.p + 2 :])
        for t in (-0.05, -1e-3, 1e-3, 0.05):
            shifted = effects.shifted(t)
            std = np.concatenate(std_from_effects(kind, shifted, sc))
            y = x.copy()
            y[: post.p] = std
            assert post.log_density(y) < base

    def test_noise_free_rw_recovers_truth(self):
        spec = GridSpec(10, 10, gamma=1e-12)
        beta, data = case_data(8, spec, seed=5)
        res = map_fit("rw", data, FitConfig(method="map"))
        assert np.max(np.abs(res.point.stacked() - beta.stacked())) <= 0.05

    @pytest.mark.parametrize("kind, expected", [("rw", 0.000), ("re", -0.099)])
    def test_case3_bias(self, kind, expected):
        beta, data = case_data(3)
        res = map_fit(kind, data, FitConfig(method="map"))
        s = bias_s(res.point, beta, centering_indexes(data.spec))
        assert s == pytest.approx(expected, abs=0.03)

    def test_deterministic(self, case8_data):
        _, data = case8_data
        a = map_fit("re", data, FitConfig(method="map", seed=9))
        b = map_fit("re", data, FitConfig(method="map", seed=9))
        assert a.to_dict() == b.to_dict()

    @pytest.mark.parametrize("kind", KINDS)
    def test_degenerate_data_never_raises(self, kind):
        spec = GridSpec(3, 3, T=2, gamma=None)
        i, j, k = table_indexes(spec)
        data = Dataset(i, j, k, np.full(len(i), 0.7), spec)
        res = map_fit(kind, data, FitConfig(method="map", restarts=2))
        assert res.converged is False


def _unconstrained(post, res):
    """Rebuild the full coordinate vector of a MAP result."""
    theta = np.asarray(res.diagnostics["theta"])
    from apcsim.marginal import MarginalPosterior

    m = MarginalPosterior(post)
    return m.joint_point(m.evaluate(theta))


class TestMcmc:
    @pytest.mark.parametrize("kind", KINDS)
    def test_summary_contract(self, kind, case8_data):
        _, data = case8_data
        res = mcmc_fit(kind, data, QUICK)
        for blk in res.point.blocks:
            assert abs(blk.sum()) <= 1e-9
        assert res.converged == (res.max_rhat < QUICK.rhat_threshold)
        names = list(res.rhat)
        assert names[0] == "b0" and "b_C[19]" in names and "sigma" in names
        assert len(names) == 1 + 39 + 1 + kind.n_hyper
        assert res.draws["table"].shape == (4, 500, len(names))
        assert np.isfinite(res.log_posterior_at_point)

    def test_deterministic(self, case8_data):
        _, data = case8_data
        a = mcmc_fit("rw", data, QUICK)
        b = mcmc_fit("rw", data, QUICK)
        assert a.to_dict() == b.to_dict()
        c = mcmc_fit("rw", data, QUICK.replace(seed=77))
        assert c.to_dict() != a.to_dict()

    def test_single_chain_has_no_rhat(self, case8_data):
        _, data = case8_data
        res = mcmc_fit("rr", data, QUICK.replace(chains=1))
        assert res.rhat is None and res.converged is False

    @pytest.mark.parametrize("kind", [ModelKind.RR, ModelKind.RW])
    def test_agrees_with_map(self, kind, case8_data):
        _, data = case8_data
        med = mcmc_fit(kind, data, FitConfig())
        mode = map_fit(kind, data, FitConfig(method="map"))
        assert med.converged
        assert np.max(np.abs(med.point.stacked() - mode.point.stacked())) <= 0.05

    def test_re_minor_mode_is_left(self):
        # the marginal of the scales has a second, far lighter mode here; every
        # chain must end up in the dominant one
        _, data = case_data(12)
        res = mcmc_fit("re", data, FitConfig(seed=1246))
        assert res.converged
        assert res.diagnostics["modes_located"] >= 2
        assert res.hyper_hat["sigma_C"] < 0.2

    def test_degenerate_data_flagged(self):
        spec = GridSpec(3, 3, T=2, gamma=None)
        i, j, k = table_indexes(spec)
        data = Dataset(i, j, k, np.full(len(i), 0.7), spec)
        res = mcmc_fit("rr", data, FitConfig(iterations=600, warmup=200))
        assert res.converged is False

    @pytest.mark.parametrize("kind", KINDS)
    def test_hmc_agrees_with_collapsed(self, kind):
        # two samplers that share no code beyond the log density
        spec = GridSpec(4, 4, T=10)
        _, data = case_data(8, spec, seed=7)
        cfg = FitConfig(iterations=2000, warmup=700, thin=1)
        hmc = mcmc_fit(kind, data, cfg.replace(sampler="hmc"))
        col = mcmc_fit(kind, data, cfg)
        assert hmc.max_rhat < 1.1 and col.converged
        tab = col.draws["table"].reshape(-1, col.draws["table"].shape[2])
        L = spec.L
        sd = tab[:, : 1 + L].std(0)
        gap = np.abs(np.r_[hmc.point.b0, hmc.point.stacked()] - np.r_[col.point.b0, col.point.stacked()])
        assert np.all(gap <= 0.25 * sd)
        assert hmc.sigma_hat == pytest.approx(col.sigma_hat, rel=0.03)
        for name in kind.hyper_names:
            assert abs(np.log(hmc.hyper_hat[name] / col.hyper_hat[name])) <= 0.3

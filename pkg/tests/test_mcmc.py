import numpy as np
import pytest
from scipy.stats import kstest

from conftest import make_gaussian_target
from evidest import mcmc
from evidest.optim import find_map, laplace_gaussian
from evidest.targets import PriorSpec, TargetPosterior


@pytest.fixture(scope="module")
def std4_chains(std4_target):
    return mcmc.nuts_sample(std4_target, chains=5, n_warmup=500, n_keep=5000, seed=42)


def test_nuts_moments_on_standard_normal(std4_chains):
    pooled = std4_chains.pooled()
    assert np.all(np.abs(pooled.mean(axis=0)) < 0.02)
    cov = np.cov(pooled.T)
    assert np.max(np.abs(cov - np.eye(4))) < 0.05


def test_nuts_split_rhat_below_threshold(std4_chains):
    for j in range(4):
        assert mcmc.split_rhat(std4_chains, j) < 1.01


def test_nuts_no_divergences_on_gaussian(std4_chains):
    assert std4_chains.divergences.sum() == 0
    assert std4_chains.flags == []


def test_nuts_cached_log_gamma_matches_reevaluation(std4_chains, std4_target):
    sub = std4_chains.samples[0, :100]
    np.testing.assert_allclose(
        std4_chains.log_gamma[0, :100], std4_target.log_unnorm_batch(sub), rtol=1e-12
    )


def test_nuts_kolmogorov_smirnov_1d():
    target = make_gaussian_target(np.zeros(1), np.eye(1), label="std1")
    chains = mcmc.nuts_sample(target, chains=5, n_warmup=500, n_keep=4000, seed=7)
    draws = chains.pooled()[:, 0]
    thinned = draws[::2][:10_000]
    assert kstest(thinned, "norm").pvalue > 0.01


def test_nuts_init_failure():
    target = TargetPosterior(dim=1, log_unnorm=lambda th: -np.inf,
                             prior=PriorSpec([0.0], [1.0]))
    with pytest.raises(mcmc.SamplerInitError):
        mcmc.nuts_sample(target, chains=1, n_warmup=10, n_keep=10, seed=0)


def test_leapfrog_energy_error_second_order(std4_target):
    # Fixed trajectory length, halving step sizes: |dH| ~ eps^2.
    rng = np.random.default_rng(8)
    theta0 = rng.standard_normal(4)
    p0 = rng.standard_normal(4)
    t_total = 2.0
    eps_grid = np.array([0.2, 0.1, 0.05, 0.025, 0.0125])
    errs = [
        mcmc.leapfrog_energy_error(std4_target, theta0, p0, eps, int(round(t_total / eps)))
        for eps in eps_grid
    ]
    slope = np.polyfit(np.log(eps_grid), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


# ------------------------------------------------------------- diagnostics


def test_split_rhat_identical_constant_chains():
    x = np.ones((4, 100))
    assert mcmc.split_rhat(x) == np.inf


def test_split_rhat_iid_chains_near_one():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((4, 10_000))
    assert 0.999 < mcmc.split_rhat(x) < 1.005


def test_split_rhat_detects_offset_chains():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((2, 2000))
    x[0] += 3.0
    x[1] -= 3.0
    assert mcmc.split_rhat(x) > 1.5


def test_ess_iid_chains_close_to_total():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 5000))
    ess = mcmc.rank_normalized_ess(x)
    assert ess == pytest.approx(20_000, rel=0.10)


def test_ess_ar1_matches_analytic():
    rho = 0.9
    rng = np.random.default_rng(12)
    c, n = 4, 20_000
    x = np.empty((c, n))
    for i in range(c):
        innov = rng.standard_normal(n)
        x[i, 0] = innov[0]
        for t in range(1, n):
            x[i, t] = rho * x[i, t - 1] + np.sqrt(1 - rho**2) * innov[t]
    expected = c * n * (1 - rho) / (1 + rho)
    assert mcmc.rank_normalized_ess(x) == pytest.approx(expected, rel=0.25)


def test_ess_constant_chain_sentinel():
    x = np.ones((4, 100))
    assert mcmc.rank_normalized_ess(x) == 0.0


# ------------------------------------------------------------- bridge


@pytest.fixture(scope="module")
def conjugate_chains(conjugate):
    target, _, _ = conjugate
    return mcmc.nuts_sample(target, chains=5, n_warmup=1000, n_keep=3000, seed=5)


def test_bridge_on_conjugate_oracle(conjugate, conjugate_chains):
    target, log_z_true, _ = conjugate
    res = mcmc.bridge_sample(target, conjugate_chains, n_q=100_000, k=50, seed=11)
    assert res.converged
    assert abs(res.log_z - log_z_true) < 0.005
    assert 0 < res.n_pi_effective <= conjugate_chains.n_total


def test_bridge_two_step_convergence_when_proposal_is_target():
    # gamma = Z * q for the fitted mixture: constant ratio, exact fixed point.
    rng = np.random.default_rng(13)
    from evidest.gmm import GaussianComponent, GaussianMixture

    mix = GaussianMixture(
        [GaussianComponent([0.0, 1.0], np.diag([1.0, 2.0])),
         GaussianComponent([2.0, -1.0], np.eye(2))],
        [0.4, 0.6],
    )
    log_z = -2.3
    target = TargetPosterior(
        dim=2,
        log_unnorm=lambda th: float(log_z + mix.logpdf(th)),
        batch=lambda ths: log_z + mix.logpdf_batch(ths),
    )
    draws = mix.sample(15_000, rng).reshape(5, 3000, 2)
    chains = mcmc.ChainSet(
        samples=draws,
        log_gamma=np.array([target.log_unnorm_batch(c) for c in draws]),
        step_sizes=np.ones(5), inv_mass=np.ones((5, 2)),
        divergences=np.zeros(5, dtype=int), n_warmup=0, seed=0,
    )
    res = mcmc.bridge_sample(target, chains, n_q=5000, k=2, seed=14, _proposal=mix)
    assert res.iterations <= 2
    assert res.log_z == pytest.approx(log_z, abs=1e-9)


def test_bridge_inverse_q_reduces_to_plain_is(conjugate, conjugate_chains):
    target, _, _ = conjugate
    res = mcmc.bridge_sample(target, conjugate_chains, n_q=20_000, k=10, seed=15,
                             _alpha="inverse_q")
    # recompute the plain IS estimate with the same proposal and draws is not
    # possible externally; instead check the identity structurally: with
    # alpha = 1/q the denominator is exactly 1, so iterations stop at 1.
    assert res.iterations == 1
    # and a fresh optimal-bridge run from the same chain set differs only
    # within Monte Carlo error of the IS estimate
    res_opt = mcmc.bridge_sample(target, conjugate_chains, n_q=20_000, k=10, seed=15)
    assert abs(res.log_z - res_opt.log_z) < 0.05


def test_bridge_iteration_gap_contracts(conjugate, conjugate_chains):
    target, _, _ = conjugate
    # Track the iterate path by running with increasing caps.
    vals = []
    for cap in (1, 2, 3, 4, 6, 8):
        res = mcmc.bridge_sample(target, conjugate_chains, n_q=20_000, k=10, seed=16,
                                 max_iter=cap, tol=0.0)
        vals.append(res.log_z)
    gaps = np.abs(np.diff(np.array(vals)))
    tail = gaps[2:]
    assert all(g2 <= g1 + 1e-12 for g1, g2 in zip(tail, tail[1:]))


def test_chain_set_save_load_round_trip(tmp_path, std4_chains):
    std4_chains.save(tmp_path, prefix="chain")
    loaded = mcmc.ChainSet.load(tmp_path, prefix="chain")
    np.testing.assert_allclose(loaded.samples, std4_chains.samples, rtol=1e-15)
    np.testing.assert_allclose(loaded.log_gamma, std4_chains.log_gamma, rtol=1e-15)
    assert loaded.n_warmup == std4_chains.n_warmup
    np.testing.assert_allclose(loaded.inv_mass, std4_chains.inv_mass)


def test_laplace_ellipse_misses_funnel_posterior(richards_target):
    # The mode-centered Gaussian's 95% region misses a large share of the
    # (growth rate, initial cover) posterior under the non-identifiable model.
    res = find_map(richards_target, restarts=4, rng=np.random.default_rng(17))
    comp = laplace_gaussian(res)
    chains = mcmc.nuts_sample(richards_target, chains=4, n_warmup=600, n_keep=1500,
                              seed=18)
    draws = chains.pooled()[:, [0, 2]]  # (log10 r, log10 C0)
    cov2 = comp.cov[np.ix_([0, 2], [0, 2])]
    mean2 = comp.mean[[0, 2]]
    diff = draws - mean2
    maha = np.einsum("ij,jk,ik->i", diff, np.linalg.inv(cov2), diff)
    outside = np.mean(maha > 5.991)  # chi^2_2 95% quantile
    assert outside > 0.10  # far beyond the nominal 5%

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from evidest import coral
from evidest._ode import rk45_py
from evidest.coral import CoralDataset, CoralModelKind
from evidest.targets import log_prior

L10 = np.log10


def theta_of(r, k, c0, sigma, beta=None):
    vals = [L10(r), L10(k), L10(c0)]
    if beta is not None:
        vals.append(L10(beta))
    vals.append(L10(sigma))
    return np.array(vals)


TIMES = np.linspace(0.0, 4028.0, 11)


def test_equilibrium_when_started_at_capacity():
    for kind in CoralModelKind:
        beta = 1.7 if kind is CoralModelKind.RICHARDS else None
        th = theta_of(2e-3, 80.0, 80.0, 1.0, beta=beta)
        traj = coral.solve_trajectory(kind, th, TIMES)
        np.testing.assert_allclose(traj, 80.0, rtol=1e-12)


def test_initial_condition_at_time_zero():
    for kind in CoralModelKind:
        beta = 0.3 if kind is CoralModelKind.RICHARDS else None
        th = theta_of(1e-3, 90.0, 2.5, 1.0, beta=beta)
        traj = coral.solve_trajectory(kind, th, np.array([0.0]))
        assert traj[0] == pytest.approx(2.5, rel=1e-12)


def test_richards_with_unit_shape_is_logistic():
    rng = np.random.default_rng(5)
    times = rng.uniform(0, 4028, 20)
    times.sort()
    th_log = theta_of(2e-3, 75.0, 1.5, 1.0)
    th_rich = theta_of(2e-3, 75.0, 1.5, 1.0, beta=1.0)
    a = coral.solve_trajectory(CoralModelKind.LOGISTIC, th_log, times)
    b = coral.solve_trajectory(CoralModelKind.RICHARDS, th_rich, times)
    np.testing.assert_allclose(a, b, rtol=1e-10)


_ODE_RHS = {
    CoralModelKind.LOGISTIC: lambda c, r, k, beta: r * c * (1 - c / k),
    CoralModelKind.GOMPERTZ: lambda c, r, k, beta: r * c * np.log(k / c),
    CoralModelKind.RICHARDS: lambda c, r, k, beta: r * c * (1 - (c / k) ** beta),
}


@pytest.mark.parametrize("kind", list(CoralModelKind))
def test_closed_forms_match_numerical_integration(kind):
    r, k, c0, beta = 1.5e-3, 70.0, 3.0, 0.6
    th = theta_of(r, k, c0, 1.0, beta=beta if kind is CoralModelKind.RICHARDS else None)
    times = np.linspace(0.0, 4028.0, 9)
    closed = coral.solve_trajectory(kind, th, times)

    rhs = _ODE_RHS[kind]

    def f(t, y):
        return np.array([rhs(y[0], r, k, beta)])

    # In-repo adaptive integrator as the oracle...
    y_num, status, *_ = rk45_py.rk45_solve(f, (0.0, 4028.0), [c0], times,
                                           rtol=1e-10, atol=1e-12)
    assert status == rk45_py.OK
    np.testing.assert_allclose(closed, y_num[:, 0], rtol=1e-6)
    # ...cross-checked against an independent library integrator.
    sol = solve_ivp(f, (0.0, 4028.0), [c0], t_eval=times, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(closed, sol.y[0], rtol=1e-6)


def test_log_likelihood_zero_residual():
    th = theta_of(1e-3, 100.0, 5.0, 1.0)
    c = coral.solve_trajectory(CoralModelKind.LOGISTIC, th, np.array([100.0]))
    data = CoralDataset(times=[100.0], covers=c)
    ll = coral.coral_log_likelihood(CoralModelKind.LOGISTIC, th, data)
    assert ll == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_log_likelihood_two_unit_residuals():
    th = theta_of(1e-3, 100.0, 5.0, 1.0)
    times = np.array([50.0, 150.0])
    c = coral.solve_trajectory(CoralModelKind.LOGISTIC, th, times)
    data = CoralDataset(times=times, covers=c + np.array([1.0, -1.0]))
    ll = coral.coral_log_likelihood(CoralModelKind.LOGISTIC, th, data)
    assert ll == pytest.approx(-np.log(2 * np.pi) - 1.0)


def test_log_likelihood_monte_carlo_calibration():
    # Mean log-likelihood at the truth over repeated datasets concentrates
    # around -S/2 log(2 pi sigma^2) - S/2.
    sigma = 2.0
    th = theta_of(1.8e-3, 80.0, 2.0, sigma)
    clean = coral.solve_trajectory(CoralModelKind.LOGISTIC, th, TIMES)
    rng = np.random.default_rng(7)
    n_rep, s = 1000, TIMES.size
    lls = np.empty(n_rep)
    for i in range(n_rep):
        data = CoralDataset(times=TIMES, covers=clean + sigma * rng.standard_normal(s))
        lls[i] = coral.coral_log_likelihood(CoralModelKind.LOGISTIC, th, data)
    expected = -0.5 * s * np.log(2 * np.pi * sigma**2) - 0.5 * s
    tol = 3.0 * np.sqrt(s / 2.0) / np.sqrt(n_rep)
    assert lls.mean() == pytest.approx(expected, abs=tol)


def test_likelihood_decreases_as_any_residual_grows():
    th = theta_of(1e-3, 100.0, 5.0, 1.0)
    c = coral.solve_trajectory(CoralModelKind.LOGISTIC, th, TIMES)
    base = CoralDataset(times=TIMES, covers=c)
    ll_prev = coral.coral_log_likelihood(CoralModelKind.LOGISTIC, th, base)
    for bump in (0.5, 1.0, 2.0, 5.0):
        covers = c.copy()
        covers[4] += bump
        ll = coral.coral_log_likelihood(
            CoralModelKind.LOGISTIC, th, CoralDataset(times=TIMES, covers=covers)
        )
        assert ll < ll_prev
        ll_prev = ll


def test_target_dimensions_and_prior_sds():
    data = coral.load_dataset()
    for kind, d in [(CoralModelKind.LOGISTIC, 4), (CoralModelKind.GOMPERTZ, 4),
                    (CoralModelKind.RICHARDS, 5)]:
        target = coral.coral_target(kind, data)
        assert target.dim == d
        expected_sds = [3.0] * (d - 1) + [1.0]
        np.testing.assert_allclose(target.prior.sds, expected_sds)


def test_target_is_likelihood_plus_prior(coral_data):
    target = coral.coral_target(CoralModelKind.RICHARDS, coral_data)
    th = target.prior.means
    ll = coral.coral_log_likelihood(CoralModelKind.RICHARDS, th, coral_data)
    lp = log_prior(target.prior, th)
    assert target.log_unnorm(th) == pytest.approx(ll + lp, rel=1e-14)


def test_batch_evaluation_matches_scalar(coral_data):
    target = coral.coral_target(CoralModelKind.RICHARDS, coral_data)
    rng = np.random.default_rng(2)
    thetas = target.prior.sample(50, rng)
    batch = target.log_unnorm_batch(thetas)
    singles = [target.log_unnorm(t) for t in thetas]
    np.testing.assert_allclose(batch, singles, rtol=1e-12)


def test_analytic_gradient_matches_finite_differences(coral_data):
    rng = np.random.default_rng(4)
    for kind in CoralModelKind:
        target = coral.coral_target(kind, coral_data)
        for _ in range(4):
            th = target.prior.means + 0.4 * rng.standard_normal(target.dim)
            g_an = target.grad_log_unnorm(th)
            g_fd = target.grad_log_unnorm(th, scheme="fd", h=1e-6)
            np.testing.assert_allclose(g_an, g_fd, rtol=2e-4, atol=2e-4)


def test_trajectories_monotone_when_growing():
    rng = np.random.default_rng(9)
    times = np.linspace(0.0, 5000.0, 60)
    for kind in CoralModelKind:
        for _ in range(25):
            k = 10 ** rng.uniform(1, 2.5)
            c0 = k * rng.uniform(0.001, 0.95)
            r = 10 ** rng.uniform(-4, -2)
            beta = 10 ** rng.uniform(-1.5, 1.0) if kind is CoralModelKind.RICHARDS else None
            th = theta_of(r, k, c0, 1.0, beta=beta)
            traj = coral.solve_trajectory(kind, th, times)
            assert np.all(np.diff(traj) >= -1e-9 * k)


def test_richards_limits_to_gompertz_as_shape_vanishes():
    r, k, c0 = 2e-3, 80.0, 2.0
    times = np.linspace(0.0, 4028.0, 40)
    gomp = coral.solve_trajectory(CoralModelKind.GOMPERTZ, theta_of(r, k, c0, 1.0), times)
    gaps = []
    for beta in 10.0 ** -np.arange(1, 7):
        th = theta_of(r / beta, k, c0, 1.0, beta=beta)
        rich = coral.solve_trajectory(CoralModelKind.RICHARDS, th, times)
        gaps.append(np.max(np.abs(rich - gomp)))
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-4 * k


def test_map_recovers_simulation_truth():
    # Simulation-based check: the MAP from a logistic-truth dataset sits
    # within 2 Laplace posterior SDs of the truth.
    from evidest.optim import find_map, laplace_gaussian

    truth = theta_of(1e-3, 100.0, 1.0, 1.0)
    times = np.linspace(0.0, 4028.0, 11)
    clean = coral.solve_trajectory(CoralModelKind.LOGISTIC, truth, times)
    rng = np.random.default_rng(12)
    data = CoralDataset(times=times, covers=clean + 1.0 * rng.standard_normal(11))
    target = coral.coral_target(CoralModelKind.LOGISTIC, data)
    res = find_map(target, restarts=4, rng=np.random.default_rng(1))
    sds = np.sqrt(np.diag(laplace_gaussian(res).cov))
    assert np.all(np.abs(res.theta_map - truth) <= 2.0 * sds)
    # MAP objective dominates the truth's (optimality sanity oracle).
    assert res.log_unnorm_at_map >= target.log_unnorm(truth)


def test_surrogate_dataset_regenerates_packaged_csv(coral_data):
    regen = coral.surrogate_dataset()
    np.testing.assert_allclose(coral_data.times, regen.times, rtol=1e-9)
    np.testing.assert_allclose(coral_data.covers, regen.covers, rtol=1e-9)


def test_dataset_csv_round_trip(tmp_path):
    data = coral.surrogate_dataset()
    path = tmp_path / "coral.csv"
    coral.write_dataset_csv(data, path)
    loaded = coral.load_dataset(path)
    np.testing.assert_allclose(loaded.covers, data.covers, rtol=1e-5)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("t_days,cover_pct\n")
    assert "\r" not in text


def test_dataset_validation_errors():
    with pytest.raises(ValueError):
        CoralDataset(times=[1.0, 1.0], covers=[2.0, 3.0])
    with pytest.raises(ValueError):
        CoralDataset(times=[2.0, 1.0], covers=[2.0, 3.0])
    with pytest.raises(ValueError):
        CoralDataset(times=[], covers=[])

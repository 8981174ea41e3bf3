import numpy as np
import pytest

from evidest.targets import (
    DimensionMismatchError,
    GradientError,
    PriorSpec,
    TargetPosterior,
    log_prior,
    posterior_from_likelihood,
)


def test_log_prior_standard_normal_at_mode():
    prior = PriorSpec(means=[0.0], sds=[1.0])
    assert log_prior(prior, np.array([0.0])) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_log_prior_two_dims():
    prior = PriorSpec(means=[0.0, 0.0], sds=[1.0, 1.0])
    assert log_prior(prior, np.array([1.0, 1.0])) == pytest.approx(-np.log(2 * np.pi) - 1.0)


def test_log_prior_coral_at_mean():
    sds = np.array([3.0, 3.0, 3.0, 1.0])
    prior = PriorSpec(means=[-3.0, 2.0, 0.0, 0.0], sds=sds)
    expected = -np.sum(np.log(sds * np.sqrt(2 * np.pi)))
    assert log_prior(prior, prior.means) == pytest.approx(expected, rel=1e-12)


def test_log_prior_maximized_at_mean():
    prior = PriorSpec(means=[1.0, -2.0], sds=[0.5, 2.0])
    at_mean = log_prior(prior, prior.means)
    rng = np.random.default_rng(0)
    for _ in range(50):
        other = prior.means + rng.standard_normal(2)
        assert log_prior(prior, other) <= at_mean


def test_log_prior_dimension_mismatch():
    prior = PriorSpec(means=[0.0, 0.0], sds=[1.0, 1.0])
    with pytest.raises(DimensionMismatchError):
        log_prior(prior, np.array([0.0]))


def test_prior_batch_matches_scalar():
    prior = PriorSpec(means=[0.5, -1.0, 2.0], sds=[1.0, 0.2, 5.0])
    rng = np.random.default_rng(1)
    thetas = prior.sample(20, rng)
    batch = prior.logpdf_batch(thetas)
    singles = [log_prior(prior, t) for t in thetas]
    np.testing.assert_allclose(batch, singles, rtol=1e-13)


def _std_normal_target():
    return TargetPosterior(
        dim=1, log_unnorm=lambda th: float(-0.5 * th[0] ** 2), label="1d"
    )


def test_grad_fd_at_mode_is_zero():
    target = _std_normal_target()
    g = target.grad_log_unnorm(np.array([0.0]), scheme="fd")
    assert abs(g[0]) < 1e-9


def test_grad_fd_matches_analytic_slope():
    target = _std_normal_target()
    g = target.grad_log_unnorm(np.array([2.0]), scheme="fd", h=1e-5)
    assert g[0] == pytest.approx(-2.0, abs=1e-6)


def test_grad_analytic_preferred_when_available():
    calls = {"grad": 0}

    def grad(th):
        calls["grad"] += 1
        return -th

    target = TargetPosterior(dim=1, log_unnorm=lambda th: float(-0.5 * th[0] ** 2), grad=grad)
    target.grad_log_unnorm(np.array([1.0]))
    assert calls["grad"] == 1


def test_grad_fd_second_order_convergence():
    # Halving h shrinks the error against a near-exact reference by ~4x.
    def lu(th):
        return float(np.sin(th[0]) - 0.1 * th[0] ** 4)

    target = TargetPosterior(dim=1, log_unnorm=lu)
    x = np.array([0.7])
    exact = np.cos(0.7) - 0.4 * 0.7**3
    err_h = abs(target.grad_log_unnorm(x, scheme="fd", h=1e-3)[0] - exact)
    err_h2 = abs(target.grad_log_unnorm(x, scheme="fd", h=5e-4)[0] - exact)
    assert err_h / err_h2 == pytest.approx(4.0, rel=0.2)


def test_grad_error_carries_coordinate():
    def lu(th):
        return -np.inf if th[1] > 0.05 else 0.0

    target = TargetPosterior(dim=3, log_unnorm=lu)
    with pytest.raises(GradientError) as err:
        target.grad_log_unnorm(np.array([0.0, 0.0, 0.0]), scheme="fd", h=0.1)
    assert err.value.coordinate == 1


def test_posterior_is_exact_sum_of_parts():
    prior = PriorSpec(means=[0.0, 1.0], sds=[1.0, 2.0])

    def loglik(th):
        return float(-np.abs(th).sum())

    target = posterior_from_likelihood(loglik, prior, label="sum")
    rng = np.random.default_rng(3)
    for _ in range(20):
        th = rng.standard_normal(2)
        assert target.log_unnorm(th) == loglik(th) + log_prior(prior, th)


def test_value_and_grad_consistent_with_parts():
    target, _, _ = __import__("conftest").make_conjugate_target()
    th = np.array([0.3, -1.2, 0.7, 0.1])
    f, g = target.value_and_grad(th)
    assert f == pytest.approx(target.log_unnorm(th))
    np.testing.assert_allclose(g, target.grad_log_unnorm(th), rtol=1e-12)


def test_minus_inf_propagates_without_raising():
    def lu(th):
        return -np.inf if th[0] > 1 else 0.0

    target = TargetPosterior(dim=1, log_unnorm=lu)
    assert target.log_unnorm(np.array([2.0])) == -np.inf
    assert np.isneginf(target.log_unnorm_batch(np.array([[2.0], [3.0]]))).all()

"""Shared fixtures: analytic-oracle targets and cached expensive artifacts."""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from evidest import coral, lifestage
from evidest.targets import PriorSpec, TargetPosterior


def make_gaussian_target(mean, cov, log_scale=0.0, prior_sds_factor=3.0, label="gauss"):
    """Unnormalized Gaussian target gamma = exp(log_scale) * N(mean, cov).

    Its true evidence is exactly ``log_scale``.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    prec = np.linalg.inv(cov)
    log_norm = -0.5 * (d * np.log(2 * np.pi) + np.linalg.slogdet(cov)[1])

    def log_unnorm(th):
        r = th - mean
        return float(log_scale + log_norm - 0.5 * r @ prec @ r)

    def batch(ths):
        r = np.asarray(ths) - mean
        return log_scale + log_norm - 0.5 * np.einsum("ij,jk,ik->i", r, prec, r)

    def grad(th):
        return -prec @ (th - mean)

    prior = PriorSpec(means=mean, sds=prior_sds_factor * np.sqrt(np.diag(cov)))
    return TargetPosterior(dim=d, log_unnorm=log_unnorm, label=label, grad=grad,
                           batch=batch, prior=prior)


def make_conjugate_target(seed=3):
    """4-D linear-Gaussian conjugate problem with closed-form evidence.

    y ~ N(theta, S_lik), theta ~ N(mu0, S0); evidence = N(y; mu0, S_lik+S0).
    """
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 4))
    s0 = a @ a.T + 4.0 * np.eye(4)
    s_lik = np.diag([0.5, 1.0, 2.0, 0.8])
    mu0 = np.array([1.0, -2.0, 0.5, 0.0])
    y = np.array([2.0, -1.0, 0.0, 1.0])
    log_z = float(multivariate_normal(mean=mu0, cov=s_lik + s0).logpdf(y))

    s_lik_inv = np.linalg.inv(s_lik)
    s0_inv = np.linalg.inv(s0)
    c_lik = -0.5 * (4 * np.log(2 * np.pi) + np.linalg.slogdet(s_lik)[1])
    c_pri = -0.5 * (4 * np.log(2 * np.pi) + np.linalg.slogdet(s0)[1])

    def log_lik(th):
        r = y - th
        return float(c_lik - 0.5 * r @ s_lik_inv @ r)

    def log_unnorm(th):
        r0 = th - mu0
        return log_lik(th) + float(c_pri - 0.5 * r0 @ s0_inv @ r0)

    def batch(ths):
        r = y - np.asarray(ths)
        r0 = np.asarray(ths) - mu0
        return (c_lik - 0.5 * np.einsum("ij,jk,ik->i", r, s_lik_inv, r)
                + c_pri - 0.5 * np.einsum("ij,jk,ik->i", r0, s0_inv, r0))

    def grad(th):
        return s_lik_inv @ (y - th) - s0_inv @ (th - mu0)

    prior = PriorSpec(means=mu0, sds=np.sqrt(np.diag(s0)))
    target = TargetPosterior(dim=4, log_unnorm=log_unnorm, label="conjugate",
                             grad=grad, batch=batch, log_likelihood=log_lik, prior=prior)
    aux = {"y": y, "mu0": mu0, "s0": s0, "s_lik": s_lik}
    return target, log_z, aux


@pytest.fixture(scope="session")
def conjugate():
    target, log_z, aux = make_conjugate_target()
    return target, log_z, aux


@pytest.fixture(scope="session")
def coral_data():
    return coral.load_dataset()


@pytest.fixture(scope="session")
def richards_target(coral_data):
    return coral.coral_target(coral.CoralModelKind.RICHARDS, coral_data)


@pytest.fixture(scope="session")
def insect_demo():
    """One simulated insect dataset on the worked-example mask (cached)."""
    mask = lifestage.MechanismMask.from_string("111010")
    data = lifestage.simulate_dataset(mask, seed=11)
    return mask, data


@pytest.fixture(scope="session")
def std4_target():
    return make_gaussian_target(np.zeros(4), np.eye(4), label="std4")

"""Unconstrained parameter space, normal priors, and the target-posterior
abstraction consumed by every estimator.

All inference runs on the log10-transformed parameter scale; everything in
this package treats a parameter vector as a plain 1-D float array of the
model's dimensionality. Log-densities return ``-inf`` (never raise) on
numerically impossible inputs so that samplers can treat them as rejections.
"""

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class DimensionMismatchError(ValueError):
    """Parameter vector length does not match the owning object."""


class GradientError(RuntimeError):
    """Non-finite log-density inside a finite-difference stencil."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal priors on the log10-transformed parameters."""

    means: np.ndarray
    sds: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "sds", np.asarray(self.sds, dtype=float))
        if self.means.shape != self.sds.shape or self.means.ndim != 1:
            raise DimensionMismatchError("prior means and sds must be 1-D of equal length")
        if np.any(self.sds <= 0):
            raise ValueError("prior standard deviations must be strictly positive")

    @property
    def dim(self):
        return self.means.size

    def logpdf(self, theta):
        return log_prior(self, theta)

    def logpdf_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        z = (thetas - self.means) / self.sds
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.sds)) - 0.5 * self.dim * LOG_2PI

    def grad_logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        return -(theta - self.means) / self.sds**2

    def sample(self, n, rng):
        return self.means + self.sds * rng.standard_normal((n, self.dim))


def log_prior(prior, theta):
    """Sum of independent normal log-densities; errors on length mismatch."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (prior.dim,):
        raise DimensionMismatchError(
            f"theta has shape {theta.shape}, prior has dimension {prior.dim}"
        )
    z = (theta - prior.means) / prior.sds
    return float(-0.5 * np.dot(z, z) - np.sum(np.log(prior.sds)) - 0.5 * prior.dim * LOG_2PI)


@dataclass
class TargetPosterior:
    """Evaluatable unnormalized log-posterior over an unconstrained vector.

    ``log_unnorm`` must be deterministic and return ``-inf`` rather than
    raising on extreme inputs. Optional hooks:

    * ``grad``: analytic gradient of the unnormalized log-posterior.
    * ``log_unnorm_batch``: vectorized evaluation over the rows of an
      (n, dim) matrix; defaults to a row loop.
    * ``log_likelihood`` / ``prior``: used by BIC and by estimators that
      need prior draws (robust AMIS initialization, NUTS chain starts).
    """

    dim: int
    log_unnorm: callable
    label: str = ""
    grad: callable = None
    batch: callable = None
    log_likelihood: callable = None
    prior: PriorSpec = None
    fd_step: float = 1e-5
    _stencil: np.ndarray = field(default=None, repr=False)

    def __call__(self, theta):
        return self.log_unnorm(theta)

    def log_unnorm_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        if self.batch is not None:
            return np.asarray(self.batch(thetas), dtype=float)
        return np.array([self.log_unnorm(t) for t in thetas])

    def has_analytic_grad(self):
        return self.grad is not None

    def _fd_points(self, theta, h):
        d = self.dim
        pts = np.tile(theta, (2 * d, 1))
        idx = np.arange(d)
        pts[2 * idx, idx] += h
        pts[2 * idx + 1, idx] -= h
        return pts

    def grad_log_unnorm(self, theta, scheme="auto", h=None):
        """Gradient of the unnormalized log-posterior.

        scheme: 'auto' uses the analytic gradient when the model supplies
        one, 'fd' forces central finite differences with step ``h``
        (default ``fd_step``) on the unconstrained scale.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(f"theta has shape {theta.shape}, target dim {self.dim}")
        if scheme not in ("auto", "fd", "analytic"):
            raise ValueError(f"unknown gradient scheme: {scheme!r}")
        if scheme == "analytic" and self.grad is None:
            raise ValueError("target does not supply an analytic gradient")
        if scheme in ("auto", "analytic") and self.grad is not None:
            return np.asarray(self.grad(theta), dtype=float)
        h = self.fd_step if h is None else h
        vals = self.log_unnorm_batch(self._fd_points(theta, h))
        if not np.all(np.isfinite(vals)):
            bad = int(np.argmax(~np.isfinite(vals)))
            raise GradientError(
                f"non-finite log-density in finite-difference stencil (coordinate {bad // 2})",
                coordinate=bad // 2,
            )
        return (vals[0::2] - vals[1::2]) / (2.0 * h)

    def value_and_grad(self, theta, h=None):
        """(log_unnorm, gradient) pair; batches the FD stencil when needed."""
        theta = np.asarray(theta, dtype=float)
        if self.grad is not None:
            return float(self.log_unnorm(theta)), np.asarray(self.grad(theta), dtype=float)
        h = self.fd_step if h is None else h
        pts = np.vstack([theta[None, :], self._fd_points(theta, h)])
        vals = self.log_unnorm_batch(pts)
        f0 = float(vals[0])
        if not np.all(np.isfinite(vals[1:])):
            bad = int(np.argmax(~np.isfinite(vals[1:])))
            raise GradientError(
                f"non-finite log-density in finite-difference stencil (coordinate {bad // 2})",
                coordinate=bad // 2,
            )
        g = (vals[1::2] - vals[2::2]) / (2.0 * h)
        return f0, g


def grad_log_unnorm(target, theta, scheme="auto", h=None):
    """Module-level convenience wrapper around the target method."""
    return target.grad_log_unnorm(theta, scheme=scheme, h=h)


def posterior_from_likelihood(log_likelihood, prior, label="", grad_log_likelihood=None,
                              log_likelihood_batch=None):
    """Compose a likelihood with a :class:`PriorSpec` into a TargetPosterior.

    The resulting ``log_unnorm`` is exactly likelihood + prior (assertable
    by summing the parts).
    """

    def log_unnorm(theta):
        lp = log_prior(prior, theta)
        ll = log_likelihood(theta)
        return ll + lp

    batch = None
    if log_likelihood_batch is not None:

        def batch(thetas):
            return log_likelihood_batch(thetas) + prior.logpdf_batch(thetas)

    grad = None
    if grad_log_likelihood is not None:

        def grad(theta):
            return grad_log_likelihood(theta) + prior.grad_logpdf(theta)

    return TargetPosterior(
        dim=prior.dim,
        log_unnorm=log_unnorm,
        label=label,
        grad=grad,
        batch=batch,
        log_likelihood=log_likelihood,
        prior=prior,
    )

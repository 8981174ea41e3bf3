"""Gaussian mixtures: density evaluation, sampling, weighted EM, pruning,
and the closed-form squared Hellinger distance.

All density work happens in log space (importance weights in this problem
span hundreds of orders of magnitude); Cholesky factors are computed once
per component and cached.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .targets import LOG_2PI

EM_MAX_ITER = 100
EM_REL_TOL = 1e-8
PRUNE_FLOOR = 1e-4
COV_JITTER = 1e-8
_CHUNK = 200_000  # E-step block size: bounds memory, fixes reduction order


class DegenerateWeightsError(RuntimeError):
    """All importance weights vanished; the mixture fit is undefined."""


class GaussianComponent:
    """Single Gaussian with cached Cholesky factor and log-normalizer."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape does not match mean")
        self.chol = np.linalg.cholesky(self.cov)  # raises LinAlgError if not SPD
        self.log_norm = -np.sum(np.log(np.diag(self.chol))) - 0.5 * d * LOG_2PI

    @property
    def dim(self):
        return self.mean.size

    def logpdf(self, theta):
        return float(self.logpdf_batch(np.asarray(theta, dtype=float)[None, :])[0])

    def logpdf_batch(self, thetas):
        z = solve_triangular(self.chol, (np.asarray(thetas, float) - self.mean).T, lower=True)
        return self.log_norm - 0.5 * np.sum(z * z, axis=0)

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T

    def to_dict(self):
        return {"mean": self.mean.tolist(), "covariance": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["covariance"]))


class GaussianMixture:
    """Weighted collection of Gaussian components (weights sum to one)."""

    def __init__(self, components, weights):
        self.components = list(components)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.components) != self.weights.size or not self.components:
            raise ValueError("need one weight per component")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative")
        total = self.weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {total}")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise ValueError("all components must share one dimension")
        self.dim = dims.pop()

    @property
    def n_components(self):
        return len(self.components)

    def logpdf(self, theta):
        return mixture_logpdf(self, theta)

    def logpdf_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        per = np.empty((thetas.shape[0], self.n_components))
        for k, comp in enumerate(self.components):
            per[:, k] = log_w[k] + comp.logpdf_batch(thetas)
        return logsumexp(per, axis=1)

    def component_logpdfs(self, thetas):
        """(n, K) matrix of per-component log-densities, weights excluded."""
        thetas = np.asarray(thetas, dtype=float)
        out = np.empty((thetas.shape[0], self.n_components))
        for k, comp in enumerate(self.components):
            out[:, k] = comp.logpdf_batch(thetas)
        return out

    def sample(self, n, rng):
        return mixture_sample(self, n, rng)

    def to_dict(self):
        return {"weights": self.weights.tolist(), "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls([GaussianComponent.from_dict(c) for c in d["components"]], np.array(d["weights"]))


def mixture_logpdf(mix, theta):
    """log of the mixture density at one point, via log-sum-exp."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (mix.dim,):
        raise ValueError(f"theta has shape {theta.shape}, mixture dim {mix.dim}")
    return float(mix.logpdf_batch(theta[None, :])[0])


def mixture_sample(mix, n, rng):
    """n i.i.d. draws: categorical component choice, then Cholesky draw."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = rng.choice(mix.n_components, size=n, p=mix.weights)
    z = rng.standard_normal((n, mix.dim))
    out = np.empty((n, mix.dim))
    for k, comp in enumerate(mix.components):
        rows = idx == k
        if np.any(rows):
            out[rows] = comp.mean + z[rows] @ comp.chol.T
    return out


def prune_mixture(mix, floor=PRUNE_FLOOR):
    """Drop components below the weight floor and renormalize.

    Always keeps at least the single largest-weight component.
    """
    if not 0.0 < floor < 1.0:
        raise ValueError("floor must be in (0, 1)")
    keep = mix.weights >= floor
    if not np.any(keep):
        keep = mix.weights == mix.weights.max()
    comps = [c for c, k in zip(mix.components, keep) if k]
    w = mix.weights[keep]
    return GaussianMixture(comps, w / w.sum())


def squared_hellinger(a, b):
    """Closed-form squared Hellinger distance between two Gaussians."""
    if a.dim != b.dim:
        raise ValueError("components have different dimensions")
    m = 0.5 * (a.cov + b.cov)
    chol_m = np.linalg.cholesky(m)
    logdet_m = 2.0 * np.sum(np.log(np.diag(chol_m)))
    logdet_a = 2.0 * np.sum(np.log(np.diag(a.chol)))
    logdet_b = 2.0 * np.sum(np.log(np.diag(b.chol)))
    diff = a.mean - b.mean
    z = solve_triangular(chol_m, diff, lower=True)
    log_bc = 0.25 * (logdet_a + logdet_b) - 0.5 * logdet_m - 0.125 * np.dot(z, z)
    return float(-np.expm1(log_bc))


@dataclass
class StagedSampleSet:
    """Per-stage sample blocks with cached log-target and per-proposal
    log-density values (the bookkeeping behind deterministic multiple
    mixture weights)."""

    dim: int
    blocks: list = field(default_factory=list)  # (N_t, d) arrays
    log_gamma_blocks: list = field(default_factory=list)
    logq_columns: list = field(default_factory=list)  # per proposal, over all samples

    @property
    def n_stages(self):
        return len(self.blocks)

    @property
    def stage_sizes(self):
        return [b.shape[0] for b in self.blocks]

    @property
    def n_total(self):
        return int(sum(self.stage_sizes))

    def all_thetas(self):
        return np.vstack(self.blocks) if self.blocks else np.empty((0, self.dim))

    def all_log_gamma(self):
        return np.concatenate(self.log_gamma_blocks) if self.blocks else np.empty(0)

    def stage_of_sample(self):
        return np.repeat(np.arange(self.n_stages), self.stage_sizes)

    def add_stage(self, thetas, log_gamma, proposals):
        """Append a block drawn from proposals[-1]; refresh the cache so
        column s holds log q_s at every sample seen so far."""
        thetas = np.asarray(thetas, dtype=float)
        log_gamma = np.asarray(log_gamma, dtype=float)
        self.blocks.append(thetas)
        self.log_gamma_blocks.append(log_gamma)
        for s, q in enumerate(proposals[:-1]):
            self.logq_columns[s] = np.concatenate([self.logq_columns[s], q.logpdf_batch(thetas)])
        for s, q in enumerate(proposals[:-1]):
            if q is proposals[-1]:  # frozen proposal: reuse the cached column
                self.logq_columns.append(self.logq_columns[s].copy())
                return
        self.logq_columns.append(proposals[-1].logpdf_batch(self.all_thetas()))

    def logq_matrix(self):
        """(n_total, n_stages) cached proposal log-densities."""
        return np.column_stack(self.logq_columns)

    def log_mixture_q(self, upto=None):
        """log of the size-weighted proposal mixture over stages 1..upto."""
        upto = self.n_stages if upto is None else upto
        sizes = np.array(self.stage_sizes[:upto], dtype=float)
        n_sub = int(sizes.sum())
        cols = np.column_stack(self.logq_columns[:upto])[: n_sub, :]
        return logsumexp(cols + np.log(sizes), axis=1) - np.log(sizes.sum())

    def log_weights(self, upto=None):
        """log importance weights log gamma - log q_{1:upto} for the samples
        drawn in stages 1..upto."""
        upto = self.n_stages if upto is None else upto
        n_sub = int(sum(self.stage_sizes[:upto]))
        lg = self.all_log_gamma()[:n_sub]
        return lg - self.log_mixture_q(upto)


def _normalize_log_weights(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not np.any(finite):
        raise DegenerateWeightsError("all importance weights are zero")
    return np.exp(lw - logsumexp(lw[finite]))


def _kmeanspp_seeds(thetas, w, k, rng):
    """k-means++ style seeding on weighted samples; returns seed rows."""
    n = thetas.shape[0]
    seeds = np.empty((k, thetas.shape[1]))
    probs = w / w.sum()
    idx = rng.choice(n, p=probs)
    seeds[0] = thetas[idx]
    d2 = np.sum((thetas - seeds[0]) ** 2, axis=1)
    for j in range(1, k):
        scores = probs * d2
        total = scores.sum()
        if total <= 0:  # all mass collapsed on chosen points
            idx = rng.choice(n, p=probs)
        else:
            idx = rng.choice(n, p=scores / total)
        seeds[j] = thetas[idx]
        d2 = np.minimum(d2, np.sum((thetas - seeds[j]) ** 2, axis=1))
    return seeds


def _weighted_moments(thetas, w):
    mean = w @ thetas / w.sum()
    xc = thetas - mean
    cov = (xc * w[:, None]).T @ xc / w.sum()
    return mean, cov


def _safe_component(mean, cov, var_floor):
    """Build a component with the standing ridge, escalating only if the
    factorization still fails (keeps the EM objective monotone: the same
    tiny ridge applies on every iteration, not just after a collapse)."""
    cov = 0.5 * (cov + cov.T) + COV_JITTER * np.diag(var_floor)
    jitter = COV_JITTER * 10.0
    for _ in range(12):
        try:
            return GaussianComponent(mean, cov), False
        except np.linalg.LinAlgError:
            cov = cov + jitter * np.diag(var_floor)
            jitter *= 10.0
    return GaussianComponent(mean, np.diag(var_floor)), True


def weighted_em(thetas, log_weights=None, k=50, init=None, rng=None, max_iter=EM_MAX_ITER,
                rel_tol=EM_REL_TOL):
    """Fit a k-component Gaussian mixture to importance-weighted samples.

    ``thetas`` may be an (n, d) array with explicit ``log_weights``, or a
    :class:`StagedSampleSet` (weights derived from its cached target and
    proposal log-densities). The updates are the standard EM
    responsibilities multiplied by the (self-normalized) importance
    weights; covariance updates use the responsibility-sum normalization.
    Terminates after ``max_iter`` iterations or when the relative change of
    the weighted negative log-density objective drops below ``rel_tol``.

    Returns ``(mixture, info)`` where info records the per-iteration
    objective trace and a degraded-covariance flag.
    """
    if isinstance(thetas, StagedSampleSet):
        sset = thetas
        thetas = sset.all_thetas()
        log_weights = sset.log_weights()
    thetas = np.asarray(thetas, dtype=float)
    n, d = thetas.shape
    w = _normalize_log_weights(log_weights)
    keep = w > 0
    if keep.sum() < k:
        k = max(1, int(keep.sum()))
    thetas_w = thetas[keep]
    w = w[keep]
    w = w / w.sum()
    n_eff = thetas_w.shape[0]
    k = min(k, n_eff)

    g_mean, g_cov = _weighted_moments(thetas_w, w)
    var_floor = np.maximum(np.diag(g_cov), 1e-12)

    if init is not None:
        comps = [GaussianComponent(c.mean.copy(), c.cov.copy()) for c in init.components]
        alphas = init.weights.copy()
        k = len(comps)
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        seeds = _kmeanspp_seeds(thetas_w, w, k, rng)
        comps = []
        for j in range(k):
            comp, _ = _safe_component(seeds[j], g_cov.copy(), var_floor)
            comps.append(comp)
        alphas = np.full(k, 1.0 / k)

    log_w_samples = np.log(w)
    objective_trace = []
    regularized = False
    prev_obj = np.inf

    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            log_alpha = np.log(alphas)

        # E-step + sufficient statistics, chunked with a fixed reduction order.
        sum_r = np.zeros(k)
        sum_rx = np.zeros((k, d))
        sum_rxx = np.zeros((k, d, d))
        obj = 0.0
        old_means = np.array([c.mean for c in comps])
        for lo in range(0, n_eff, _CHUNK):
            hi = min(lo + _CHUNK, n_eff)
            x = thetas_w[lo:hi]
            log_comp = np.empty((hi - lo, k))
            for j, comp in enumerate(comps):
                log_comp[:, j] = log_alpha[j] + comp.logpdf_batch(x)
            log_mix = logsumexp(log_comp, axis=1)
            obj -= float(np.dot(w[lo:hi], log_mix))
            resp = np.exp(log_comp - log_mix[:, None]) * w[lo:hi, None]
            sum_r += resp.sum(axis=0)
            sum_rx += resp.T @ x
            for j in range(k):
                xc = x - old_means[j]
                sum_rxx[j] += (xc * resp[:, j : j + 1]).T @ xc
        objective_trace.append(obj)

        if prev_obj - obj < rel_tol * abs(prev_obj) and np.isfinite(prev_obj):
            break
        prev_obj = obj

        # M-step (covariances recentered from old means by the exact shift identity).
        alphas = sum_r / sum_r.sum()
        new_comps = []
        for j in range(k):
            if sum_r[j] <= 0 or not np.isfinite(sum_r[j]):
                new_comps.append(comps[j])  # dead component, keep as-is
                continue
            mean_j = sum_rx[j] / sum_r[j]
            shift = mean_j - old_means[j]
            cov_j = sum_rxx[j] / sum_r[j] - np.outer(shift, shift)
            comp, was_reg = _safe_component(mean_j, cov_j, var_floor)
            regularized = regularized or was_reg
            new_comps.append(comp)
        comps = new_comps

    mix = GaussianMixture(comps, alphas / alphas.sum())
    info = {"objective_trace": objective_trace, "regularized": regularized,
            "n_iter": len(objective_trace)}
    return mix, info

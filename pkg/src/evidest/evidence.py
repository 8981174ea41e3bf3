"""Evidence estimators: BIC, Laplace, Laplace importance sampling, and the
two adaptive multiple importance sampling schemes, plus the shared weight
diagnostics (effective sample size, Pareto-smoothed tails).

All staged estimators run through one engine so that a one-stage schedule
degenerates exactly (same draws, same estimate) to plain importance
sampling from the initial proposal.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .gmm import (
    DegenerateWeightsError,
    GaussianMixture,
    StagedSampleSet,
    prune_mixture,
    weighted_em,
)
from .optim import (
    InitFailureError,
    cauchy_simplex_minimize,
    find_map,
    init_proposal,
    laplace_gaussian,
)
from .targets import LOG_2PI

PARETO_MIN_N = 25
PARETO_K_WARN = 0.7
PRUNE_FLOOR = 1e-4
DEFAULT_NU = 4.0


@dataclass(frozen=True)
class SampleSchedule:
    """Per-stage sample counts for adaptive multiple importance sampling."""

    stage_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.stage_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError("stage sizes must be positive")
        object.__setattr__(self, "stage_sizes", sizes)

    @classmethod
    def geometric(cls, n_start=10_000, n_end=1_000_000, stages=16):
        """Cumulative totals form a geometric sequence from n_start to n_end."""
        if stages == 1:
            return cls((int(n_end),))
        t = np.arange(stages) / (stages - 1)
        cum = np.floor(10.0 ** (np.log10(n_start) + (np.log10(n_end) - np.log10(n_start)) * t))
        sizes = np.diff(np.concatenate([[0], cum])).astype(int)
        return cls(tuple(sizes))

    @property
    def n_stages(self):
        return len(self.stage_sizes)

    @property
    def n_total(self):
        return int(sum(self.stage_sizes))


@dataclass
class EvidenceEstimate:
    log_z: float
    method: str
    ess: float
    pareto_k: float = None
    n_total: int = 0
    n_stages: list = field(default_factory=list)
    seed: int = None
    wall_time_s: float = 0.0
    model_label: str = ""
    flags: list = field(default_factory=list)

    def to_dict(self):
        def clean(x):
            if x is None:
                return None
            x = float(x)
            return x if math.isfinite(x) else None

        return {
            "schema_version": 1,
            "method": self.method,
            "model_label": self.model_label,
            "log_z": clean(self.log_z),
            "ess": clean(self.ess),
            "pareto_k": clean(self.pareto_k) if self.pareto_k not in (None,) else None,
            "n_total": int(self.n_total),
            "n_stages": [int(n) for n in self.n_stages],
            "seed": self.seed,
            "wall_time_s": float(self.wall_time_s),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            log_z=-np.inf if d["log_z"] is None else float(d["log_z"]),
            method=d["method"],
            ess=np.nan if d["ess"] is None else float(d["ess"]),
            pareto_k=d.get("pareto_k"),
            n_total=d.get("n_total", 0),
            n_stages=list(d.get("n_stages", [])),
            seed=d.get("seed"),
            wall_time_s=d.get("wall_time_s", 0.0),
            model_label=d.get("model_label", ""),
            flags=list(d.get("flags", [])),
        )


@dataclass
class WeightedSampleSet:
    """Samples with importance weights and the stage that drew each one."""

    thetas: np.ndarray
    log_weights: np.ndarray
    log_gamma: np.ndarray
    stage_of: np.ndarray

    @property
    def n(self):
        return self.thetas.shape[0]

    def normalized_weights(self):
        lw = self.log_weights
        finite = np.isfinite(lw)
        if not np.any(finite):
            raise DegenerateWeightsError("all importance weights are zero")
        return np.exp(lw - logsumexp(lw[finite]))

    def subsample(self, n, rng):
        """Weight-proportional resample without weights (for compact dumps)."""
        idx = rng.choice(self.n, size=n, p=self.normalized_weights())
        return self.thetas[idx]


def ess(weights):
    """Effective sample size (sum w)^2 / sum w^2 of non-negative weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if total == 0:
        return 0.0
    return float(total**2 / np.sum(w * w))


def ess_log(log_weights):
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not np.any(finite):
        return 0.0
    lw = lw[finite]
    return float(np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw)))


def _gpd_fit(x):
    """Profile-posterior generalized Pareto fit on sorted exceedances.

    Returns (shape k regularized toward 1/2, scale sigma).
    """
    n = x.size
    prior_bs = 3.0
    m = 30 + int(np.sqrt(n))
    jj = np.arange(1.0, m + 1.0)
    b = 1.0 - np.sqrt(m / (jj - 0.5))
    b = b / (prior_bs * x[int(n / 4 + 0.5) - 1]) + 1.0 / x[-1]
    k_cand = np.mean(np.log1p(-b[:, None] * x), axis=1)
    log_lik = n * (np.log(-b / k_cand) - k_cand - 1.0)
    with np.errstate(over="ignore"):
        weights = 1.0 / np.exp(log_lik - log_lik[:, None]).sum(axis=1)
    b_post = np.sum(b * weights)
    k_post = np.mean(np.log1p(-b_post * x))
    sigma = -k_post / b_post
    prior_k = 10.0
    k_reg = k_post * n / (n + prior_k) + prior_k * 0.5 / (n + prior_k)
    return float(k_reg), float(sigma)


def _gpd_quantile(p, k, sigma):
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def pareto_smooth_log(log_weights):
    """Tail-smooth log importance weights; returns (smoothed, k_hat).

    Fits a generalized Pareto distribution to the M largest weights,
    M = min(ceil(0.2 n), ceil(3 sqrt(n))), replaces those order statistics
    by quantiles at expected ranks, and caps at the pre-smoothing maximum.
    Fewer than 25 weights, or a degenerate tail, pass through unchanged
    (k_hat None or -inf respectively).
    """
    lw = np.asarray(log_weights, dtype=float).copy()
    n = lw.size
    if n < PARETO_MIN_N:
        return lw, None
    m = min(math.ceil(0.2 * n), math.ceil(3.0 * math.sqrt(n)))
    order = np.argsort(lw, kind="stable")
    tail_idx = order[-m:]
    shift = lw[order[-1]]
    if not np.isfinite(shift):
        return lw, None
    cutoff_log = lw[order[-m - 1]]
    if not np.isfinite(cutoff_log):
        return lw, -np.inf  # tail not separable from zero-weight body
    cutoff = math.exp(cutoff_log - shift)
    tail = np.exp(lw[tail_idx] - shift)
    exceed = tail - cutoff
    if exceed[-1] <= 0 or np.allclose(exceed, exceed[-1]):
        return lw, -np.inf
    k_hat, sigma = _gpd_fit(exceed)
    if not (np.isfinite(k_hat) and np.isfinite(sigma) and sigma > 0):
        return lw, -np.inf
    probs = (np.arange(1.0, m + 1.0) - 0.5) / m
    smoothed = _gpd_quantile(probs, k_hat, sigma) + cutoff
    smoothed = np.minimum(smoothed, tail[-1])
    lw[tail_idx] = np.log(smoothed) + shift
    return lw, k_hat


def pareto_smooth(weights):
    """Linear-scale wrapper around :func:`pareto_smooth_log`."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    lw_s, k_hat = pareto_smooth_log(lw)
    if k_hat is None or k_hat == -np.inf:
        return w.copy(), k_hat  # untouched tail: avoid the log/exp round trip
    return np.exp(lw_s), k_hat


class StudentTProposal:
    """Multivariate t via the scale-mixture representation."""

    def __init__(self, mean, scale, nu=DEFAULT_NU):
        self.mean = np.asarray(mean, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self.nu = float(nu)
        self.dim = self.mean.size
        self.chol = np.linalg.cholesky(self.scale)
        d = self.dim
        self.log_norm = (
            gammaln((self.nu + d) / 2.0)
            - gammaln(self.nu / 2.0)
            - 0.5 * d * np.log(self.nu * np.pi)
            - np.sum(np.log(np.diag(self.chol)))
        )

    def logpdf_batch(self, thetas):
        from scipy.linalg import solve_triangular

        z = solve_triangular(self.chol, (np.asarray(thetas, float) - self.mean).T, lower=True)
        maha = np.sum(z * z, axis=0)
        return self.log_norm - 0.5 * (self.nu + self.dim) * np.log1p(maha / self.nu)

    def logpdf(self, theta):
        return float(self.logpdf_batch(np.asarray(theta)[None, :])[0])

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        u = rng.chisquare(self.nu, size=n) / self.nu
        return self.mean + (z @ self.chol.T) / np.sqrt(u)[:, None]


def bic_log_evidence(target, map_result, n_obs):
    """Large-data evidence approximation from the maximized log-likelihood."""
    if n_obs < 1:
        raise ValueError("n_obs must be >= 1")
    t0 = time.perf_counter()
    log_lik = map_result.log_lik_at_map
    if not np.isfinite(log_lik):
        raise ValueError("map_result carries no maximized log-likelihood")
    log_z = log_lik - 0.5 * map_result.dim * math.log(n_obs)
    return EvidenceEstimate(
        log_z=float(log_z), method="bic", ess=np.nan, pareto_k=None,
        n_total=0, n_stages=[], wall_time_s=time.perf_counter() - t0,
        model_label=target.label,
    )


def laplace_log_evidence(target, map_result):
    """Closed-form Gaussian-at-the-mode evidence approximation."""
    t0 = time.perf_counter()
    chol = np.linalg.cholesky(map_result.hessian_reg)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    log_z = map_result.log_unnorm_at_map + 0.5 * map_result.dim * LOG_2PI - 0.5 * log_det
    flags = [] if map_result.hessian_spd else ["hessian_regularized"]
    return EvidenceEstimate(
        log_z=float(log_z), method="laplace", ess=np.nan, pareto_k=None,
        n_total=0, n_stages=[], wall_time_s=time.perf_counter() - t0,
        model_label=target.label, flags=flags,
    )


def _laplace_t_proposal(map_result, nu=DEFAULT_NU):
    cov = laplace_gaussian(map_result).cov
    return StudentTProposal(map_result.theta_map, cov, nu=nu)


def _variance_reduce(placeholder, sset, n_total_schedule):
    """Refine mixture weights to minimize the sampled chi-square objective.

    Location/scale parameters stay fixed; only the weights move, starting
    from the weighted-EM weights, so the refined objective never exceeds
    the EM value.
    """
    lw = sset.log_weights()
    log_c = lw + sset.all_log_gamma()
    sizes = np.asarray(sset.stage_sizes, dtype=float)
    log_a = logsumexp(sset.logq_matrix() + np.log(sizes), axis=1) - math.log(n_total_schedule)
    n_rest = n_total_schedule - sizes.sum()
    if n_rest <= 0:
        return placeholder.weights, {"skipped": True}
    log_rest = math.log(n_rest / n_total_schedule)

    rel = log_c - log_a
    finite = np.isfinite(rel)
    if not np.any(finite):
        return placeholder.weights, {"skipped": True}
    rel_max = rel[finite].max()
    keep = finite & (rel > rel_max - 60.0)
    # Row-rescaled linear form: term_n = 1/(A_n + B_n @ w) with the dominant
    # row at A = 1; dropped rows are > 26 decades below the peak term.
    log_phi = placeholder.component_logpdfs(sset.all_thetas()[keep])
    a_lin = np.exp(np.minimum(log_a[keep] - log_c[keep] + rel_max, 575.0))
    b_lin = np.exp(np.minimum(log_phi + log_rest - log_c[keep, None] + rel_max, 575.0))

    def objective(w):
        denom = a_lin + b_lin @ w
        return float(np.sum(1.0 / denom))

    def gradient(w):
        denom = a_lin + b_lin @ w
        return -(b_lin.T @ (1.0 / denom**2))

    res = cauchy_simplex_minimize(objective, gradient, placeholder.weights)
    return res.w, {"skipped": False, "n_iter": res.n_iter,
                   "objective_start": objective(placeholder.weights),
                   "objective_end": res.fun}


def _run_staged(target, q1, schedule, rng, k_pl=50, adapt="none", smooth=True,
                method_name="", seed=None, extra_flags=()):
    """Shared staged-sampling engine behind the IS-family estimators."""
    t0 = time.perf_counter()
    sset = StagedSampleSet(dim=target.dim)
    proposals = [q1]
    flags = list(extra_flags)
    n_stages = schedule.n_stages
    placeholder_prev = None  # warm start for the next stage's EM
    for t in range(n_stages):
        thetas = proposals[-1].sample(schedule.stage_sizes[t], rng)
        log_gamma = target.log_unnorm_batch(thetas)
        sset.add_stage(thetas, log_gamma, proposals)
        if t == n_stages - 1 or adapt == "none":
            if t < n_stages - 1:
                proposals.append(proposals[-1])
            continue
        try:
            placeholder, _ = weighted_em(sset, k=k_pl, rng=rng, init=placeholder_prev)
            placeholder_prev = placeholder
            if adapt == "em+vr":
                w_opt, _ = _variance_reduce(placeholder, sset, schedule.n_total)
                placeholder = GaussianMixture(placeholder.components, w_opt / w_opt.sum())
            q_next = prune_mixture(placeholder, PRUNE_FLOOR)
        except DegenerateWeightsError:
            q_next = proposals[-1]
            flags.append(f"adaptation_frozen_stage_{t + 1}")
        proposals.append(q_next)

    lw = sset.log_weights()
    k_hat = None
    if smooth:
        lw, k_hat = pareto_smooth_log(lw)
    finite = np.isfinite(lw)
    if not np.any(finite):
        log_z = -np.inf
        sample_ess = 0.0
        flags.append("all_weights_zero")
    else:
        log_z = float(logsumexp(lw[finite]) - math.log(sset.n_total))
        sample_ess = ess_log(lw)
    if k_hat is not None and np.isfinite(k_hat) and k_hat > PARETO_K_WARN:
        flags.append("pareto_k_high")

    estimate = EvidenceEstimate(
        log_z=log_z,
        method=method_name,
        ess=sample_ess,
        pareto_k=k_hat if k_hat is not None else None,
        n_total=sset.n_total,
        n_stages=list(sset.stage_sizes),
        seed=seed,
        wall_time_s=time.perf_counter() - t0,
        model_label=target.label,
        flags=flags,
    )
    samples = WeightedSampleSet(
        thetas=sset.all_thetas(),
        log_weights=lw,
        log_gamma=sset.all_log_gamma(),
        stage_of=sset.stage_of_sample(),
    )
    return estimate, samples, sset


def laplace_is(target, map_result, n=1_000_000, rng=None, nu=DEFAULT_NU, seed=None,
               smooth=True):
    """Importance sampling from the heavy-tailed Gaussian-at-the-mode proposal."""
    rng = np.random.default_rng(seed) if rng is None else rng
    proposal = _laplace_t_proposal(map_result, nu=nu)
    estimate, samples, _ = _run_staged(
        target, proposal, SampleSchedule((n,)), rng,
        adapt="none", smooth=smooth, method_name="laplace_is", seed=seed,
    )
    return estimate, samples


def standard_amis(target, map_result, schedule=None, k_pl=50, rng=None, nu=DEFAULT_NU,
                  seed=None, smooth=True):
    """Adaptive multiple importance sampling started from the Laplace proposal."""
    rng = np.random.default_rng(seed) if rng is None else rng
    schedule = SampleSchedule.geometric() if schedule is None else schedule
    proposal = _laplace_t_proposal(map_result, nu=nu)
    estimate, samples, _ = _run_staged(
        target, proposal, schedule, rng, k_pl=k_pl,
        adapt="em", smooth=smooth, method_name="standard_amis", seed=seed,
    )
    return estimate, samples


def robust_amis(target, prior=None, schedule=None, k_pl=50, pathfinder_runs=50,
                delta=0.1, rng=None, seed=None, smooth=True, pathfinder_max_iters=100,
                map_result=None):
    """Mixture-initialized AMIS with per-stage weight variance reduction.

    Falls back to the standard path (Laplace-style initial proposal) with a
    diagnostic flag when the mixture initialization produces nothing; that
    path needs either ``map_result`` or an on-the-fly MAP search.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    schedule = SampleSchedule.geometric() if schedule is None else schedule
    prior = target.prior if prior is None else prior
    if prior is None:
        raise ValueError("robust_amis needs a prior (target.prior or explicit)")
    flags = []
    try:
        q1, _ = init_proposal(
            target, prior, runs=pathfinder_runs, delta=delta, rng=rng,
            max_iters=pathfinder_max_iters,
        )
        adapt = "em+vr"
    except InitFailureError:
        flags.append("init_fallback_laplace")
        if map_result is None:
            map_result = find_map(target, restarts=4, rng=rng)
        q1 = _laplace_t_proposal(map_result)
        adapt = "em"
    estimate, samples, _ = _run_staged(
        target, q1, schedule, rng, k_pl=k_pl, adapt=adapt,
        smooth=smooth, method_name="robust_amis", seed=seed, extra_flags=flags,
    )
    return estimate, samples

"""Gradient-based posterior sampling and the bridge-sampling gold standard.

The sampler is a dynamic-trajectory HMC: per iteration the leapfrog
trajectory doubles until the no-U-turn criterion fires or the tree depth
cap is reached, with multinomial selection of the next state from the
trajectory, dual-averaging step-size adaptation toward a target acceptance
statistic, and a diagonal metric estimated during warmup.

Bridge sampling post-processes the chains: a Gaussian-mixture proposal is
fitted to a head slice of the posterior draws, the remaining draws estimate
the posterior-side expectation, and the evidence iterates to the fixed
point of the optimal bridge function with the posterior sample count
replaced by its rank-normalized effective size.
"""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri
from scipy.stats import rankdata

from .gmm import GaussianMixture, weighted_em
from .targets import GradientError

DIVERGENCE_THRESHOLD = 1000.0
MAX_TREEDEPTH = 10
TARGET_ACCEPT = 0.8
DIVERGENT_FRACTION_WARN = 0.05


class SamplerInitError(RuntimeError):
    """No finite starting point found for a chain."""


@dataclass
class ChainSet:
    """Post-warmup samples for C chains plus adaptation metadata."""

    samples: np.ndarray  # (C, n_keep, d)
    log_gamma: np.ndarray  # (C, n_keep)
    step_sizes: np.ndarray
    inv_mass: np.ndarray  # (C, d) diagonal inverse metric
    divergences: np.ndarray
    n_warmup: int
    seed: int = None
    flags: list = field(default_factory=list)

    @property
    def n_chains(self):
        return self.samples.shape[0]

    @property
    def n_kept(self):
        return self.samples.shape[1]

    @property
    def dim(self):
        return self.samples.shape[2]

    @property
    def n_total(self):
        return self.n_chains * self.n_kept

    def pooled(self):
        return self.samples.reshape(-1, self.dim)

    def save(self, directory, prefix="chain"):
        """One CSV per chain (theta_0..theta_{d-1},log_gamma) + JSON sidecar."""
        import os

        os.makedirs(directory, exist_ok=True)
        d = self.dim
        header = ",".join([f"theta_{j}" for j in range(d)] + ["log_gamma"])
        for c in range(self.n_chains):
            path = os.path.join(directory, f"{prefix}_{c}.csv")
            block = np.column_stack([self.samples[c], self.log_gamma[c]])
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(header + "\n")
                np.savetxt(fh, block, delimiter=",", fmt="%.17g")
        meta = {
            "schema_version": 1,
            "n_chains": self.n_chains,
            "n_kept": self.n_kept,
            "n_warmup": self.n_warmup,
            "dim": self.dim,
            "seed": self.seed,
            "step_sizes": self.step_sizes.tolist(),
            "inv_mass": self.inv_mass.tolist(),
            "divergences": self.divergences.tolist(),
            "flags": self.flags,
        }
        with open(os.path.join(directory, f"{prefix}_meta.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, directory, prefix="chain"):
        import os

        with open(os.path.join(directory, f"{prefix}_meta.json"), encoding="utf-8") as fh:
            meta = json.load(fh)
        samples = []
        log_gamma = []
        for c in range(meta["n_chains"]):
            block = np.loadtxt(
                os.path.join(directory, f"{prefix}_{c}.csv"), delimiter=",", skiprows=1
            )
            block = np.atleast_2d(block)
            samples.append(block[:, :-1])
            log_gamma.append(block[:, -1])
        return cls(
            samples=np.array(samples),
            log_gamma=np.array(log_gamma),
            step_sizes=np.array(meta["step_sizes"]),
            inv_mass=np.array(meta["inv_mass"]),
            divergences=np.array(meta["divergences"]),
            n_warmup=meta["n_warmup"],
            seed=meta["seed"],
            flags=list(meta["flags"]),
        )


def _leapfrog(target, theta, p, grad, eps, inv_mass):
    p_half = p + 0.5 * eps * grad
    theta_new = theta + eps * inv_mass * p_half
    lg_new, grad_new = target.value_and_grad(theta_new)
    p_new = p_half + 0.5 * eps * grad_new
    return theta_new, p_new, lg_new, grad_new


def _hamiltonian(lg, p, inv_mass):
    return -lg + 0.5 * np.dot(p * p, inv_mass)


def leapfrog_energy_error(target, theta0, p0, eps, n_steps, inv_mass=None):
    """|H_end - H_0| over a fixed-length leapfrog trajectory (test hook)."""
    inv_mass = np.ones_like(theta0) if inv_mass is None else inv_mass
    lg, grad = target.value_and_grad(theta0)
    h0 = _hamiltonian(lg, p0, inv_mass)
    theta, p = np.asarray(theta0, float).copy(), np.asarray(p0, float).copy()
    for _ in range(n_steps):
        theta, p, lg, grad = _leapfrog(target, theta, p, grad, eps, inv_mass)
    return abs(_hamiltonian(lg, p, inv_mass) - h0)


@dataclass
class _Tree:
    theta_minus: np.ndarray
    p_minus: np.ndarray
    grad_minus: np.ndarray
    theta_plus: np.ndarray
    p_plus: np.ndarray
    grad_plus: np.ndarray
    theta_sel: np.ndarray
    lg_sel: float
    grad_sel: np.ndarray
    log_w: float
    stop: bool
    diverged: bool
    alpha_sum: float
    n_alpha: int


def _uturn(theta_plus, theta_minus, p_plus, p_minus, inv_mass):
    d_theta = theta_plus - theta_minus
    return (
        np.dot(d_theta, inv_mass * p_minus) < 0.0
        or np.dot(d_theta, inv_mass * p_plus) < 0.0
    )


def _build_tree(target, theta, p, grad, direction, depth, h0, eps, inv_mass, rng):
    if depth == 0:
        try:
            theta_n, p_n, lg_n, grad_n = _leapfrog(
                target, theta, p, grad, direction * eps, inv_mass
            )
        except GradientError:
            zeros = np.zeros_like(theta)
            return _Tree(theta, p, grad, theta, p, grad, theta, -np.inf, zeros,
                         -np.inf, True, True, 0.0, 1)
        h_n = _hamiltonian(lg_n, p_n, inv_mass)
        delta = h_n - h0
        diverged = not np.isfinite(delta) or delta > DIVERGENCE_THRESHOLD
        log_w = -np.inf if diverged else -delta
        alpha = 0.0 if not np.isfinite(delta) else min(1.0, math.exp(min(-delta, 0.0)))
        return _Tree(theta_n, p_n, grad_n, theta_n, p_n, grad_n, theta_n, lg_n, grad_n,
                     log_w, diverged, diverged, alpha, 1)

    first = _build_tree(target, theta, p, grad, direction, depth - 1, h0, eps, inv_mass, rng)
    if first.stop:
        return first
    if direction == 1:
        second = _build_tree(target, first.theta_plus, first.p_plus, first.grad_plus,
                             direction, depth - 1, h0, eps, inv_mass, rng)
        theta_minus, p_minus, grad_minus = first.theta_minus, first.p_minus, first.grad_minus
        theta_plus, p_plus, grad_plus = second.theta_plus, second.p_plus, second.grad_plus
    else:
        second = _build_tree(target, first.theta_minus, first.p_minus, first.grad_minus,
                             direction, depth - 1, h0, eps, inv_mass, rng)
        theta_minus, p_minus, grad_minus = second.theta_minus, second.p_minus, second.grad_minus
        theta_plus, p_plus, grad_plus = first.theta_plus, first.p_plus, first.grad_plus

    alpha_sum = first.alpha_sum + second.alpha_sum
    n_alpha = first.n_alpha + second.n_alpha
    if second.stop:
        return _Tree(theta_minus, p_minus, grad_minus, theta_plus, p_plus, grad_plus,
                     first.theta_sel, first.lg_sel, first.grad_sel, first.log_w,
                     True, second.diverged, alpha_sum, n_alpha)
    log_w_tot = np.logaddexp(first.log_w, second.log_w)
    take_second = math.log(rng.random()) < second.log_w - log_w_tot
    sel = second if take_second else first
    stop = _uturn(theta_plus, theta_minus, p_plus, p_minus, inv_mass)
    return _Tree(theta_minus, p_minus, grad_minus, theta_plus, p_plus, grad_plus,
                 sel.theta_sel, sel.lg_sel, sel.grad_sel, log_w_tot,
                 stop, False, alpha_sum, n_alpha)


def _find_reasonable_eps(target, theta, lg, grad, inv_mass, rng):
    eps = 1.0
    p = rng.standard_normal(theta.size) / np.sqrt(inv_mass)
    h0 = _hamiltonian(lg, p, inv_mass)
    try:
        _, p_new, lg_new, _ = _leapfrog(target, theta, p, grad, eps, inv_mass)
        delta = h0 - _hamiltonian(lg_new, p_new, inv_mass)
    except GradientError:
        delta = -np.inf
    if not np.isfinite(delta):
        delta = -np.inf
    direction = 1 if delta > math.log(0.5) else -1
    for _ in range(50):
        eps *= 2.0**direction
        if not 1e-10 < eps < 1e10:
            break
        try:
            _, p_new, lg_new, _ = _leapfrog(target, theta, p, grad, eps, inv_mass)
            delta = h0 - _hamiltonian(lg_new, p_new, inv_mass)
        except GradientError:
            delta = -np.inf
        if not np.isfinite(delta):
            delta = -np.inf
        if direction == 1 and not delta > math.log(0.5):
            break
        if direction == -1 and not delta < math.log(0.5):
            break
    return float(np.clip(eps, 1e-10, 1e10))


class _DualAveraging:
    def __init__(self, eps0, target_accept=TARGET_ACCEPT):
        self.mu = math.log(10.0 * eps0)
        self.target = target_accept
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma = 0.05
        self.t0 = 10.0
        self.kappa = 0.75

    def update(self, accept_stat):
        self.count += 1
        m = self.count
        frac = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m**-self.kappa
        self.log_eps_bar = (1.0 - eta) * self.log_eps_bar + eta * self.log_eps

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_final(self):
        return math.exp(self.log_eps_bar)


def _adaptation_windows(n_warmup, init_frac=0.15, term_frac=0.10, first_window=25):
    """Expanding metric-estimation windows between a step-size-only head and
    tail; each window end triggers a mass update and step-size reset."""
    start = int(init_frac * n_warmup)
    end = n_warmup - int(term_frac * n_warmup)
    bounds = []
    size = first_window
    pos = start
    while pos + size < end:
        pos += size
        bounds.append(pos)
        size *= 2
    if bounds:
        bounds[-1] = end
    elif start < end:
        bounds = [end]
    return start, bounds


def _sample_chain(target, rng, n_warmup, n_keep, max_treedepth, init_theta):
    d = target.dim
    inv_mass = np.ones(d)
    theta = init_theta.copy()
    lg, grad = target.value_and_grad(theta)

    eps0 = _find_reasonable_eps(target, theta, lg, grad, inv_mass, rng)
    da = _DualAveraging(eps0)
    eps = eps0

    window_start, window_bounds = _adaptation_windows(n_warmup)
    window_draws = []

    samples = np.empty((n_keep, d))
    log_gammas = np.empty(n_keep)
    n_divergent = 0

    total = n_warmup + n_keep
    for it in range(total):
        warming = it < n_warmup
        p0 = rng.standard_normal(d) / np.sqrt(inv_mass)
        h0 = _hamiltonian(lg, p0, inv_mass)
        theta_minus = theta_plus = theta
        p_minus = p_plus = p0
        grad_minus = grad_plus = grad
        log_w_tree = 0.0
        alpha_sum, n_alpha = 0.0, 0
        diverged_iter = False
        for depth in range(max_treedepth):
            direction = 1 if rng.random() < 0.5 else -1
            if direction == 1:
                sub = _build_tree(target, theta_plus, p_plus, grad_plus, 1, depth,
                                  h0, eps, inv_mass, rng)
                theta_plus, p_plus, grad_plus = sub.theta_plus, sub.p_plus, sub.grad_plus
            else:
                sub = _build_tree(target, theta_minus, p_minus, grad_minus, -1, depth,
                                  h0, eps, inv_mass, rng)
                theta_minus, p_minus, grad_minus = sub.theta_minus, sub.p_minus, sub.grad_minus
            alpha_sum += sub.alpha_sum
            n_alpha += sub.n_alpha
            diverged_iter = diverged_iter or sub.diverged
            if sub.stop:
                break
            # Biased progressive selection favoring the fresh subtree.
            if math.log(rng.random()) < sub.log_w - log_w_tree:
                theta, lg, grad = sub.theta_sel, sub.lg_sel, sub.grad_sel
            log_w_tree = np.logaddexp(log_w_tree, sub.log_w)
            if _uturn(theta_plus, theta_minus, p_plus, p_minus, inv_mass):
                break

        accept_stat = alpha_sum / max(n_alpha, 1)
        if warming:
            da.update(accept_stat)
            eps = da.eps
            if it >= window_start:
                window_draws.append(theta.copy())
            if window_bounds and it == window_bounds[0] - 1:
                window_bounds.pop(0)
                draws = np.asarray(window_draws)
                n_w = draws.shape[0]
                var = draws.var(axis=0, ddof=1) if n_w > 1 else np.ones(d)
                inv_mass = n_w / (n_w + 5.0) * var + 1e-3 * (5.0 / (n_w + 5.0))
                inv_mass = np.maximum(inv_mass, 1e-10)
                window_draws = []
                eps0 = _find_reasonable_eps(target, theta, lg, grad, inv_mass, rng)
                da = _DualAveraging(max(eps0, 1e-10))
                eps = da.eps
            if it == n_warmup - 1:
                eps = da.eps_final
        else:
            if diverged_iter:
                n_divergent += 1
            keep_idx = it - n_warmup
            samples[keep_idx] = theta
            log_gammas[keep_idx] = lg

    return samples, log_gammas, eps, inv_mass, n_divergent


def nuts_sample(target, chains=5, n_warmup=1000, n_keep=2000, rng=None, seed=None,
                max_treedepth=MAX_TREEDEPTH, init_points=None):
    """Run independent dynamic-HMC chains initialized from prior draws.

    A warning flag is attached when more than 5% of post-warmup iterations
    diverge; chain starts that never reach a finite log-density raise
    SamplerInitError.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    seed_seq = np.random.SeedSequence(seed if seed is not None else rng.integers(2**63))
    chain_rngs = [np.random.default_rng(s) for s in seed_seq.spawn(chains)]

    all_samples = np.empty((chains, n_keep, target.dim))
    all_lg = np.empty((chains, n_keep))
    step_sizes = np.empty(chains)
    inv_masses = np.empty((chains, target.dim))
    divergences = np.zeros(chains, dtype=int)

    for c in range(chains):
        crng = chain_rngs[c]
        if init_points is not None:
            theta0 = np.asarray(init_points[c], dtype=float)
        else:
            if target.prior is None:
                raise SamplerInitError("target has no prior to draw chain starts from")
            theta0 = None
            for _ in range(100):
                cand = target.prior.sample(1, crng)[0]
                if np.isfinite(target.log_unnorm(cand)):
                    theta0 = cand
                    break
            if theta0 is None:
                raise SamplerInitError("no finite starting point in 100 prior draws")
        s, lg, eps, im, ndiv = _sample_chain(
            target, crng, n_warmup, n_keep, max_treedepth, theta0
        )
        all_samples[c] = s
        all_lg[c] = lg
        step_sizes[c] = eps
        inv_masses[c] = im
        divergences[c] = ndiv

    flags = []
    frac_div = divergences.sum() / (chains * n_keep)
    if frac_div > DIVERGENT_FRACTION_WARN:
        flags.append(f"divergent_fraction_{frac_div:.3f}")
    return ChainSet(
        samples=all_samples, log_gamma=all_lg, step_sizes=step_sizes,
        inv_mass=inv_masses, divergences=divergences, n_warmup=n_warmup,
        seed=seed, flags=flags,
    )


def _split_chains(x):
    """(C, n) -> (2C, n//2) by halving every chain (odd middle dropped)."""
    c, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _rank_normalize(x):
    """Pooled fractional ranks mapped through the normal quantile function."""
    shape = x.shape
    r = rankdata(x.reshape(-1), method="average")
    z = ndtri((r - 0.375) / (r.size + 0.25))
    return z.reshape(shape)


def split_rhat(chains, coordinate=None):
    """Rank-normalized split potential-scale-reduction factor.

    Accepts a ChainSet plus coordinate, or a raw (chains, draws) matrix.
    """
    x = chains.samples[:, :, coordinate] if isinstance(chains, ChainSet) else np.asarray(chains)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("need >= 2 chains with >= 4 draws each")
    z = _split_chains(_rank_normalize(x))
    m, n = z.shape
    chain_means = z.mean(axis=1)
    w = z.var(axis=1, ddof=1).mean()
    if w == 0.0:
        return np.inf
    b = n * chain_means.var(ddof=1)
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def _autocorr_fft(z):
    """Per-chain autocorrelation (biased normalization) via FFT."""
    m, n = z.shape
    zc = z - z.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(zc, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n].real / n
    return acov


def rank_normalized_ess(chains, coordinate=None):
    """Rank-normalized effective sample size with Geyer's initial-monotone
    truncation, combined across split chains.

    Accepts a ChainSet plus coordinate, or a raw (chains, draws) matrix.
    """
    x = chains.samples[:, :, coordinate] if isinstance(chains, ChainSet) else np.asarray(chains)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValueError("need >= 2 chains with >= 4 draws each")
    z = _split_chains(_rank_normalize(x))
    m, n = z.shape
    acov = _autocorr_fft(z)
    chain_var = acov[:, 0] * n / (n - 1)
    w = chain_var.mean()
    if w == 0.0:
        return 0.0
    b = n * z.mean(axis=1).var(ddof=1)
    var_plus = w * (n - 1) / n + b / n
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer pairs P_m = rho_{2m} + rho_{2m+1}: keep while positive, enforce
    # monotone non-increase with a running minimum; tau = -1 + 2 sum P_m.
    pair_sum = 0.0
    prev_pair = np.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev_pair)
        prev_pair = pair
        pair_sum += pair
        t += 2
    tau = max(-1.0 + 2.0 * pair_sum, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


@dataclass
class BridgeResult:
    log_z: float
    iterations: int
    converged: bool
    n_pi_effective: float
    proposal: GaussianMixture
    wall_time_s: float = 0.0


def bridge_sample(target, chains, n_q=1_000_000, k=50, rng=None, seed=None,
                  fit_count=10_000, reserve_cap=None, tol=1e-10, max_iter=1000,
                  _alpha="optimal", _proposal=None):
    """Iterative bridge-sampling evidence estimate from posterior chains.

    ``fit_count`` pooled draws (taken evenly across chains) fit the
    Gaussian-mixture proposal by plain EM; the remaining draws (optionally
    thinned to ``reserve_cap``) estimate the posterior-side expectation.
    ``_alpha='inverse_q'`` degrades the bridge function to 1/q, which
    reduces the estimator to plain importance sampling (implementation
    cross-check).
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed) if rng is None else rng
    c, n_kept = chains.n_chains, chains.n_kept
    if chains.n_total < fit_count + 1000:
        raise ValueError("need at least fit_count + 1000 posterior draws")

    per_chain_fit = -(-fit_count // c)  # ceil split across chains
    fit_draws = chains.samples[:, :per_chain_fit, :].reshape(-1, chains.dim)[:fit_count]
    reserved = chains.samples[:, per_chain_fit:, :]
    reserved_lg = chains.log_gamma[:, per_chain_fit:]
    n_res_per_chain = reserved.shape[1]
    if reserve_cap is not None and c * n_res_per_chain > reserve_cap:
        stride = int(np.ceil(c * n_res_per_chain / reserve_cap))
        reserved = reserved[:, ::stride, :]
        reserved_lg = reserved_lg[:, ::stride]

    # Plain EM (equal weights) for the proposal; halve k on failure.
    # Tests may inject a proposal directly (e.g. the exact target mixture).
    mixture = _proposal
    k_fit = k
    while mixture is None and k_fit >= 1:
        try:
            mixture, _ = weighted_em(
                fit_draws, np.zeros(fit_draws.shape[0]), k=k_fit, rng=rng
            )
        except (np.linalg.LinAlgError, RuntimeError):
            k_fit //= 2
    if mixture is None:
        raise RuntimeError("proposal fit failed at every component count")

    ess_by_coord = [
        rank_normalized_ess(np.ascontiguousarray(reserved[:, :, j]))
        for j in range(chains.dim)
    ]
    n_pi_eff = float(min(ess_by_coord))

    theta_q = mixture.sample(n_q, rng)
    lg_q = target.log_unnorm_batch(theta_q)
    lq_q = mixture.logpdf_batch(theta_q)
    res_flat = reserved.reshape(-1, chains.dim)
    lq_pi = mixture.logpdf_batch(res_flat)
    lg_pi = reserved_lg.reshape(-1)
    n_pi = res_flat.shape[0]

    log_nq = math.log(n_q)
    log_ne = math.log(max(n_pi_eff, 1.0))

    log_z = float(logsumexp(lg_q - lq_q) - log_nq)  # plain IS start
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if _alpha == "inverse_q":
            log_alpha_q = -lq_q
            log_alpha_pi = -lq_pi
        else:
            log_alpha_q = -np.logaddexp(log_nq + lq_q, log_ne + lg_q - log_z)
            log_alpha_pi = -np.logaddexp(log_nq + lq_pi, log_ne + lg_pi - log_z)
        log_num = logsumexp(lg_q + log_alpha_q) - log_nq
        log_den = logsumexp(lq_pi + log_alpha_pi) - math.log(n_pi)
        log_z_new = float(log_num - log_den)
        delta = abs(log_z_new - log_z)
        log_z = log_z_new
        if _alpha == "inverse_q":
            converged = True
            break
        if delta < tol * max(1.0, abs(log_z)):
            converged = True
            break
    return BridgeResult(
        log_z=log_z, iterations=iterations, converged=converged,
        n_pi_effective=n_pi_eff, proposal=mixture,
        wall_time_s=time.perf_counter() - t0,
    )

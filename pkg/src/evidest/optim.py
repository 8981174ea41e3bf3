"""Gradient-based optimization services.

* limited-memory BFGS with a strong-Wolfe line search that records the
  iterate path and dense inverse-Hessian reconstructions (the raw material
  for the multi-start path-Gaussian proposal initialization),
* MAP search with a finite-difference Hessian for the Laplace machinery,
* the quasi-Newton path-Gaussian collector and the mixture-proposal
  initializer built on it,
* a multiplicative-update minimizer for convex objectives over the
  probability simplex.

For targets without analytic gradients the line search measures the
curvature condition through a central difference along the search
direction (2 evaluations) and only computes full finite-difference
gradients at accepted iterates; this keeps quasi-Newton runs affordable
when every evaluation is an ODE solve.
"""

from dataclasses import dataclass, field

import numpy as np

from .gmm import GaussianComponent, GaussianMixture, squared_hellinger
from .targets import GradientError

WOLFE_C1 = 1e-4
WOLFE_C2 = 0.9
DIR_FD_STEP = 1e-6


class MapFailureError(RuntimeError):
    """Every optimization restart failed to produce a finite optimum."""


class LaplaceFailureError(RuntimeError):
    """Hessian not positive definite even after regularization."""


class InitFailureError(RuntimeError):
    """Proposal initialization produced no usable Gaussian."""


class OptimizationError(RuntimeError):
    pass


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    converged: bool
    n_iter: int
    n_fev: int
    path: list = field(default_factory=list)  # (x, fun, inv_hessian) per accepted iterate


class _Objective:
    """Function/gradient oracle with a cheap directional derivative."""

    def __init__(self, fun, grad=None, value_and_grad=None):
        self.fun = fun
        self._grad = grad
        self._vag = value_and_grad
        self.n_fev = 0

    def value(self, x):
        self.n_fev += 1
        return float(self.fun(x))

    def value_and_grad(self, x):
        if self._vag is not None:
            self.n_fev += 1
            f, g = self._vag(x)
            return float(f), np.asarray(g, dtype=float)
        if self._grad is not None:
            self.n_fev += 1
            return float(self.fun(x)), np.asarray(self._grad(x), dtype=float)
        raise RuntimeError("objective has no gradient implementation")

    def dir_deriv(self, x, p, unit=None):
        """phi'(alpha) at the point x along direction p."""
        if self._grad is not None:
            self.n_fev += 1
            return float(np.dot(self._grad(x), p))
        if unit is None:
            norm = np.linalg.norm(p)
            unit = p / norm
        else:
            norm = np.linalg.norm(p)
        eps = DIR_FD_STEP * (1.0 + np.linalg.norm(x))
        self.n_fev += 2
        return (self.fun(x + eps * unit) - self.fun(x - eps * unit)) / (2.0 * eps) * norm


def _strong_wolfe(obj, x, p, f0, dphi0, alpha0=1.0, max_steps=25):
    """Bracket/zoom strong-Wolfe search; returns (alpha, f_alpha) or None."""
    unit = p / np.linalg.norm(p)

    def phi(a):
        return obj.value(x + a * p)

    def dphi(a):
        return obj.dir_deriv(x + a * p, p, unit=unit)

    def zoom(a_lo, a_hi, f_lo):
        for _ in range(max_steps):
            a = 0.5 * (a_lo + a_hi)
            fa = phi(a)
            if fa > f0 + WOLFE_C1 * a * dphi0 or fa >= f_lo:
                a_hi = a
            else:
                da = dphi(a)
                if abs(da) <= -WOLFE_C2 * dphi0:
                    return a, fa
                if da * (a_hi - a_lo) >= 0:
                    a_hi = a_lo
                a_lo, f_lo = a, fa
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        if f_lo < f0:
            return a_lo, f_lo
        return None

    a_prev, f_prev = 0.0, f0
    a = alpha0
    for i in range(max_steps):
        fa = phi(a)
        if not np.isfinite(fa) or fa > f0 + WOLFE_C1 * a * dphi0 or (fa >= f_prev and i > 0):
            return zoom(a_prev, a, f_prev)
        da = dphi(a)
        if abs(da) <= -WOLFE_C2 * dphi0:
            return a, fa
        if da >= 0:
            return zoom(a, a_prev, fa)
        a_prev, f_prev = a, fa
        a = min(2.0 * a, 1e10)
    return None


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    if s_list:
        gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
    else:
        gamma = 1.0
    r = gamma * q
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * np.dot(y, r)
        r += (a - b) * s
    return r


def _dense_inverse_hessian(dim, s_list, y_list, rho_list):
    """Recursive outer-product reconstruction of the L-BFGS inverse Hessian."""
    gamma = np.dot(s_list[-1], y_list[-1]) / np.dot(y_list[-1], y_list[-1])
    h = gamma * np.eye(dim)
    eye = np.eye(dim)
    for s, y, rho in zip(s_list, y_list, rho_list):
        v = eye - rho * np.outer(s, y)
        h = v @ h @ v.T + rho * np.outer(s, s)
    return 0.5 * (h + h.T)


def lbfgs_minimize(fun, x0, grad=None, value_and_grad=None, history=6, gtol=1e-8,
                   max_iter=1000, record_path=False):
    """Limited-memory quasi-Newton descent with strong-Wolfe line search.

    Line-search failure returns the best iterate so far with
    ``converged=False``. When ``record_path`` is set, every accepted
    iterate is stored together with the current dense inverse-Hessian
    reconstruction.
    """
    obj = _Objective(fun, grad=grad, value_and_grad=value_and_grad)
    x = np.asarray(x0, dtype=float).copy()
    f, g = obj.value_and_grad(x) if (grad or value_and_grad) else (obj.value(x), None)
    if g is None:
        raise RuntimeError("lbfgs_minimize needs grad or value_and_grad")
    if not np.isfinite(f):
        raise OptimizationError("objective not finite at the starting point")

    s_list, y_list, rho_list = [], [], []
    path = []
    converged = np.linalg.norm(g) < gtol
    n_iter = 0
    for n_iter in range(0 if converged else 1, max_iter + 1):
        if converged:
            break
        p = -_two_loop(g, s_list, y_list, rho_list)
        dphi0 = np.dot(g, p)
        if dphi0 >= 0:  # stale curvature pairs; restart from steepest descent
            s_list, y_list, rho_list = [], [], []
            p = -g
            dphi0 = -np.dot(g, g)
        alpha0 = 1.0 if s_list else min(1.0, 1.0 / max(np.linalg.norm(g), 1e-12))
        hit = _strong_wolfe(obj, x, p, f, dphi0, alpha0=alpha0)
        if hit is None:
            break
        alpha, f_new = hit
        x_new = x + alpha * p
        try:
            f_new, g_new = obj.value_and_grad(x_new)
        except GradientError:
            break
        s = x_new - x
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            if len(s_list) > history:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x, f, g = x_new, f_new, g_new
        if record_path and s_list:
            path.append((x.copy(), f, _dense_inverse_hessian(x.size, s_list, y_list, rho_list)))
        if np.linalg.norm(g) < gtol:
            converged = True
    return LbfgsResult(x=x, fun=f, grad_norm=float(np.linalg.norm(g)),
                       converged=bool(converged), n_iter=n_iter, n_fev=obj.n_fev, path=path)


def _negated(target):
    """(fun, grad, value_and_grad) triple for minimizing -log gamma.

    ``grad`` is only exposed when the target carries an analytic gradient,
    so the line search falls back to directional finite differences instead
    of full-stencil gradients on expensive targets.
    """

    def neg(x):
        return -target.log_unnorm(x)

    def neg_vag(x):
        f, gr = target.value_and_grad(x)
        return -f, -gr

    neg_grad = None
    if target.has_analytic_grad():

        def neg_grad(x):
            return -target.grad_log_unnorm(x)

    return neg, neg_grad, neg_vag


@dataclass
class MapResult:
    theta_map: np.ndarray
    hessian: np.ndarray  # raw symmetrized -grad^2 log gamma at the optimum
    hessian_reg: np.ndarray  # eigenvalue-floored SPD version
    hessian_spd: bool
    log_unnorm_at_map: float
    log_lik_at_map: float
    converged: bool
    iterations: int
    dim: int


def _fd_hessian(target, x, h=1e-4):
    """Central-difference Hessian of -log gamma; differences the analytic
    gradient when the target has one, else uses a function-value stencil."""
    d = x.size
    hess = np.empty((d, d))
    if target.has_analytic_grad():
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            gp = target.grad_log_unnorm(x + e)
            gm = target.grad_log_unnorm(x - e)
            hess[:, j] = -(gp - gm) / (2.0 * h)
    else:
        pts = [x]
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = h
            pts.extend([x + ei, x - ei])
        pairs = []
        for i in range(d):
            for j in range(i + 1, d):
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i] = h
                ej[j] = h
                pairs.append((i, j))
                pts.extend([x + ei + ej, x + ei - ej, x - ei + ej, x - ei - ej])
        vals = target.log_unnorm_batch(np.asarray(pts))
        f0 = vals[0]
        for i in range(d):
            hess[i, i] = -(vals[1 + 2 * i] - 2 * f0 + vals[2 + 2 * i]) / h**2
        base = 1 + 2 * d
        for idx, (i, j) in enumerate(pairs):
            o = base + 4 * idx
            hess[i, j] = hess[j, i] = -(vals[o] - vals[o + 1] - vals[o + 2] + vals[o + 3]) / (
                4.0 * h**2
            )
    return 0.5 * (hess + hess.T)


def _regularize_spd(hess):
    eigvals, eigvecs = np.linalg.eigh(hess)
    lam_max = float(eigvals.max())
    # Eigenvalues at the stencil truncation floor (~h^2) count as degenerate.
    spd = eigvals.min() > 1e-6 * max(lam_max, 1.0)
    scale = lam_max if lam_max > 0 else 1.0
    floored = np.maximum(eigvals, 1e-6 * scale)
    reg = (eigvecs * floored) @ eigvecs.T
    return 0.5 * (reg + reg.T), bool(spd)


def find_map(target, restarts=4, rng=None, gtol=1e-8, max_iter=1000, hess_step=1e-4,
             x0=None):
    """Best-of-restarts MAP search plus a finite-difference Hessian.

    Restart points are prior draws (the target must carry a prior) unless
    an explicit ``x0`` is given.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    starts = []
    if x0 is not None:
        starts.append(np.asarray(x0, dtype=float))
    if target.prior is not None:
        draws = target.prior.sample(max(restarts * 20, 20), rng)
        finite = np.isfinite(target.log_unnorm_batch(draws))
        starts.extend(list(draws[finite][: max(restarts - len(starts), 0)]))
    if not starts:
        raise MapFailureError("no finite starting point found")

    neg, neg_grad, neg_vag = _negated(target)
    best = None
    for s in starts:
        try:
            res = lbfgs_minimize(neg, s, grad=neg_grad, value_and_grad=neg_vag,
                                 gtol=gtol, max_iter=max_iter)
        except (OptimizationError, GradientError):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.isfinite(best.fun):
        raise MapFailureError("all restarts failed")

    hess = _fd_hessian(target, best.x, h=hess_step)
    hess_reg, spd = _regularize_spd(hess)
    log_lik = float(target.log_likelihood(best.x)) if target.log_likelihood else np.nan
    return MapResult(
        theta_map=best.x,
        hessian=hess,
        hessian_reg=hess_reg,
        hessian_spd=spd,
        log_unnorm_at_map=-best.fun,
        log_lik_at_map=log_lik,
        converged=best.converged,
        iterations=best.n_iter,
        dim=best.x.size,
    )


def laplace_gaussian(map_result):
    """Gaussian with the MAP mean and inverse regularized-Hessian covariance."""
    try:
        chol = np.linalg.cholesky(map_result.hessian_reg)
    except np.linalg.LinAlgError as exc:
        raise LaplaceFailureError("Hessian not SPD after regularization") from exc
    inv_chol = np.linalg.inv(chol)
    cov = inv_chol.T @ inv_chol
    return GaussianComponent(map_result.theta_map, 0.5 * (cov + cov.T))


def pathfinder_run(target, x0, history=6, max_iters=100, gtol=1e-8):
    """One quasi-Newton run emitting a local Gaussian per accepted iterate.

    Each entry is ``(mean, covariance, log_gamma_at_mean)`` with the
    covariance taken from the current dense inverse-Hessian estimate;
    iterates whose reconstruction is not SPD are skipped. Also returns the
    best point seen on the path.
    """
    neg, neg_grad, neg_vag = _negated(target)
    res = lbfgs_minimize(neg, x0, grad=neg_grad, value_and_grad=neg_vag, history=history,
                         gtol=gtol, max_iter=max_iters, record_path=True)
    gaussians = []
    for x, f, hinv in res.path:
        try:
            comp = GaussianComponent(x, hinv)
        except np.linalg.LinAlgError:
            continue
        gaussians.append((comp, -f))
    best_point = (res.x, -res.fun)
    return gaussians, best_point


def passes_init_filters(comp, log_gamma_mean, best_log_gamma, prior, dim):
    """Admission filters for initial-proposal candidates: mean density within
    2*dim of the best point, no coordinate wider than the prior, mean within
    four prior SDs of the prior mean."""
    if not log_gamma_mean > best_log_gamma - 2.0 * dim:
        return False
    if not np.all(np.diag(comp.cov) < prior.sds**2):
        return False
    return bool(np.all(np.abs(comp.mean - prior.means) < 4.0 * prior.sds))


def init_proposal(target, prior, runs=50, delta=0.1, rng=None, history=6,
                  max_iters=100):
    """Mixture-proposal initialization from multi-start path Gaussians.

    Candidates must (a) have a mean log-density within 2d of the best point
    found, (b) be no wider than the prior in every coordinate, and (c) sit
    within four prior SDs of the prior mean; survivors are admitted
    greedily in decreasing mean log-density provided their squared
    Hellinger distance to every admitted Gaussian exceeds ``delta``. The
    returned mixture is uniform over the admitted set.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    starts = prior.sample(runs, rng)
    candidates = []
    best_x, best_lg = None, -np.inf
    for i in range(runs):
        try:
            gaussians, (bx, blg) = pathfinder_run(
                target, starts[i], history=history, max_iters=max_iters
            )
        except (OptimizationError, GradientError):
            continue
        candidates.extend(gaussians)
        if blg > best_lg:
            best_x, best_lg = bx, blg
    if not candidates:
        raise InitFailureError("no path Gaussians were produced")

    d = target.dim
    filtered = [(comp, lg) for comp, lg in candidates
                if passes_init_filters(comp, lg, best_lg, prior, d)]

    info = {"n_candidates": len(candidates), "n_filtered": len(filtered),
            "best_point": best_x, "best_log_gamma": best_lg, "fallback": False}
    filtered.sort(key=lambda t: t[1], reverse=True)
    admitted = []
    for comp, lg in filtered:
        if all(squared_hellinger(comp, other) > delta for other in admitted):
            admitted.append(comp)
    if not admitted:
        # Fall back to the single best-centered Gaussian regardless of filters.
        comp_best = max(candidates, key=lambda t: t[1])[0]
        admitted = [comp_best]
        info["fallback"] = True
    info["n_admitted"] = len(admitted)
    mix = GaussianMixture(admitted, np.full(len(admitted), 1.0 / len(admitted)))
    return mix, info


@dataclass
class SimplexResult:
    w: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    trace: list


def cauchy_simplex_minimize(fun, grad, w0, max_iter=500, rel_tol=1e-10,
                            keep_trace=False):
    """Convex minimization over the probability simplex.

    Multiplicative update ``w <- w * (1 - eta * (g - <w, g>))`` with the
    step capped to preserve non-negativity and backtracked for monotone
    descent; every iterate is feasible and ``f`` never increases.
    """
    w = np.asarray(w0, dtype=float).copy()
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("w0 must lie on the probability simplex")
    w = w / w.sum()
    fw = float(fun(w))
    trace = [w.copy()] if keep_trace else []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = np.asarray(grad(w), dtype=float)
        if not np.all(np.isfinite(g)):
            raise OptimizationError("non-finite gradient on the simplex")
        gbar = float(np.dot(w, g))
        diff = g - gbar
        direction = w * diff
        descent = float(np.dot(w, diff * diff))  # weighted gradient variance
        if descent <= 1e-300:
            converged = True
            break
        pos = (diff > 0) & (w > 0)
        eta_max = 1.0 / np.max(diff[pos]) if np.any(pos) else 1e6

        def try_step(eta):
            w_new = np.maximum(w - eta * direction, 0.0)
            total = w_new.sum()
            if total <= 0:
                return None, np.inf
            w_new = w_new / total
            return w_new, float(fun(w_new))

        eta = 0.99 * eta_max
        accepted = False
        for _ in range(60):
            w_new, f_new = try_step(eta)
            if np.isfinite(f_new) and f_new <= fw - 1e-4 * eta * descent:
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            converged = True  # no further descent available at machine scale
            break
        # Parabolic refinement toward the exact step along this direction:
        # fit through (0, fw), (eta/2, f_half), (eta, f_new).
        w_half, f_half = try_step(0.5 * eta)
        if np.isfinite(f_half):
            curv = f_new + fw - 2.0 * f_half
            if curv > 0:
                eta_q = eta * (f_new + 3.0 * fw - 4.0 * f_half) / (4.0 * curv)
                if 0.0 < eta_q < 0.999 * eta_max:
                    w_q, f_q = try_step(eta_q)
                    if np.isfinite(f_q) and f_q < min(f_new, f_half):
                        w_new, f_new = w_q, f_q
            if f_half < f_new:
                w_new, f_new = w_half, f_half
        drop = fw - f_new
        w, fw = w_new, f_new
        if keep_trace:
            trace.append(w.copy())
        if drop < rel_tol * max(abs(fw), 1e-300):
            converged = True
            break
    return SimplexResult(w=w, fun=fw, n_iter=it, converged=converged, trace=trace)
